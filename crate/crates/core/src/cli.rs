//! Batch entry points behind the `btshift` binary: run the replication
//! harness, estimate player strengths from a battle log, and fit a plain
//! marginal model as a baseline. File formats:
//!
//! - Battle log CSV: header row with `model_a, model_b, winner` plus the
//!   covariate columns declared in the config; `winner` is `model_a`,
//!   `model_b` or `tie` (a tie counts as half a win for each side).
//! - Unlabeled prompts CSV: header row with the covariate columns only.
//! - Config files: JSON, schema-validated, unknown keys rejected.
//! - Report JSON: `{players: [{name, estimate, std, ci: [lo, hi]}], regime,
//!   estimand, diagnostics, config}`.
//! - Metrics tables: one row per (arm, estimator, player) cell, emitted as
//!   CSV and JSON with identical columns.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    cond_bt_eif_phi, cond_bt_if_phi, cond_bt_psi, known_ratio_phi, one_step_phi,
    one_step_phi_fusion, one_step_psi, one_step_psi_fusion, CondPsiRoute, Estimate,
};
use crate::graph::ComparisonMatrix;
use crate::nuisance::{fit_nuisances, NuisanceSpec};
use crate::projection::{sigmoid, SolverOptions};
use crate::simulation::{run_replications, ReplicationOutput, SettingSpec};
use crate::types::{ComparisonDataset, ComparisonRecord, EstimandKind, PairwiseScheme, Regime};

/// Covariate column declaration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateSpec {
    pub name: String,
    pub kind: CovariateKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    Numeric,
    Categorical,
}

/// Target sampling weights in the config: the keyword "uniform", or an
/// explicit table by player names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhoConfig {
    Uniform(String),
    Table(Vec<RhoEntry>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhoEntry {
    pub pair: (String, String),
    pub weight: f64,
}

impl Default for RhoConfig {
    fn default() -> Self {
        RhoConfig::Uniform("uniform".into())
    }
}

/// Configuration of an estimation run over a battle log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub battle_log: PathBuf,
    #[serde(default)]
    pub unlabeled: Option<PathBuf>,
    pub reference_player: String,
    pub estimand: EstimandKind,
    pub regime: Regime,
    pub covariates: Vec<CovariateSpec>,
    #[serde(default)]
    pub rho: RhoConfig,
    /// Pairs (by player name) for the fixed-matrix conditional regime;
    /// defaults to every pair observed in the log.
    #[serde(default)]
    pub gamma_pairs: Option<Vec<(String, String)>>,
    /// Numeric column holding the known density-ratio weight.
    #[serde(default)]
    pub weight_column: Option<String>,
    #[serde(default = "NuisanceSpec::flexible")]
    pub learners: NuisanceSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ci_level")]
    pub ci_level: f64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_ci_level() -> f64 {
    0.95
}

/// Configuration of a simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    #[serde(flatten)]
    pub spec: SettingSpec,
    pub replications: usize,
    #[serde(default)]
    pub out_csv: Option<PathBuf>,
    #[serde(default)]
    pub out_json: Option<PathBuf>,
}

/// One row of the emitted ranking report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerRow {
    pub name: String,
    pub estimate: f64,
    pub std: f64,
    pub ci: (f64, f64),
}

/// The ranking report; the resolved config is embedded so a run can be
/// reproduced from its own output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub players: Vec<PlayerRow>,
    pub regime: String,
    pub estimand: String,
    pub diagnostics: crate::types::Diagnostics,
    pub config: EstimateConfig,
}

/// A parsed battle log: the dataset plus the player-name index (player 1 is
/// the configured reference) and the persisted category dictionaries.
#[derive(Debug, Clone)]
pub struct ParsedLog {
    pub dataset: ComparisonDataset,
    pub players: Vec<String>,
    /// Per categorical column: the sorted category list backing its one-hot
    /// block.
    pub categories: BTreeMap<String, Vec<String>>,
    /// Known-ratio weights per labeled record, when a weight column is set.
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
enum RawValue {
    Num(f64),
    Cat(String),
}

struct RawRow {
    name_a: String,
    name_b: String,
    y_first_listed: f64,
    values: Vec<RawValue>,
    weight: Option<f64>,
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        rows.push(rec.map_err(|e| Error::Data(format!("line {}: {e}", i + 2)))?);
    }
    Ok((headers, rows))
}

fn column_index(headers: &[String], name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Data(format!("column '{name}' missing from {}", path.display())))
}

fn parse_covariate(kind: CovariateKind, raw: &str, line: usize, column: &str) -> Result<RawValue> {
    match kind {
        CovariateKind::Numeric => raw.trim().parse::<f64>().map(RawValue::Num).map_err(|_| {
            Error::Data(format!("line {line}: column '{column}' is not numeric: '{raw}'"))
        }),
        CovariateKind::Categorical => Ok(RawValue::Cat(raw.trim().to_string())),
    }
}

/// Parse a battle log into a dataset. Players are indexed with the reference
/// first and the rest by first appearance; records are oriented so the
/// smaller index is listed first (flipping the outcome as needed), then
/// canonicalized by a name-based sort so ingestion does not depend on the
/// row order of the file.
pub fn parse_battle_log(config: &EstimateConfig) -> Result<ParsedLog> {
    let path = &config.battle_log;
    let (headers, rows) = read_csv(path)?;
    let col_a = column_index(&headers, "model_a", path)?;
    let col_b = column_index(&headers, "model_b", path)?;
    let col_w = column_index(&headers, "winner", path)?;
    let cov_cols: Vec<(usize, &CovariateSpec)> = config
        .covariates
        .iter()
        .map(|c| Ok((column_index(&headers, &c.name, path)?, c)))
        .collect::<Result<_>>()?;
    let weight_col = match &config.weight_column {
        Some(name) => Some(column_index(&headers, name, path)?),
        None => None,
    };

    let mut raws = Vec::with_capacity(rows.len());
    for (i, rec) in rows.iter().enumerate() {
        let line = i + 2;
        let get = |c: usize| -> Result<&str> {
            rec.get(c).ok_or_else(|| Error::Data(format!("line {line}: too few fields")))
        };
        let name_a = get(col_a)?.trim().to_string();
        let name_b = get(col_b)?.trim().to_string();
        if name_a.is_empty() || name_b.is_empty() || name_a == name_b {
            return Err(Error::Data(format!(
                "line {line}: invalid player pair '{name_a}' vs '{name_b}'"
            )));
        }
        let winner = get(col_w)?.trim();
        let y_first_listed = match winner {
            "model_a" => 1.0,
            "model_b" => 0.0,
            "tie" => 0.5,
            other => {
                return Err(Error::Data(format!(
                    "line {line}: winner '{other}' is not model_a, model_b or tie"
                )))
            }
        };
        let mut values = Vec::with_capacity(cov_cols.len());
        for (c, spec) in &cov_cols {
            values.push(parse_covariate(spec.kind, get(*c)?, line, &spec.name)?);
        }
        let weight = match weight_col {
            Some(c) => Some(get(c)?.trim().parse::<f64>().map_err(|_| {
                Error::Data(format!("line {line}: weight column is not numeric"))
            })?),
            None => None,
        };
        raws.push(RawRow { name_a, name_b, y_first_listed, values, weight });
    }
    if raws.is_empty() {
        return Err(Error::Data(format!("{} has no data rows", path.display())));
    }

    // player index: reference first, then first appearance
    let mut players = vec![config.reference_player.clone()];
    for r in &raws {
        for name in [&r.name_a, &r.name_b] {
            if !players.contains(name) {
                players.push(name.clone());
            }
        }
    }
    if !raws
        .iter()
        .any(|r| r.name_a == config.reference_player || r.name_b == config.reference_player)
    {
        return Err(Error::Data(format!(
            "reference player '{}' does not appear in the battle log",
            config.reference_player
        )));
    }

    // category dictionaries from the labeled data, sorted for determinism
    let mut categories: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (ci, spec) in config.covariates.iter().enumerate() {
        if spec.kind == CovariateKind::Categorical {
            let mut cats: Vec<String> = raws
                .iter()
                .map(|r| match &r.values[ci] {
                    RawValue::Cat(c) => c.clone(),
                    RawValue::Num(_) => unreachable!("kind checked at parse"),
                })
                .collect();
            cats.sort();
            cats.dedup();
            categories.insert(spec.name.clone(), cats);
        }
    }

    // canonical record order: by name pair, covariates, outcome
    let sort_key = |r: &RawRow| -> (String, String, String, u64) {
        let (lo, hi) = if r.name_a <= r.name_b {
            (r.name_a.clone(), r.name_b.clone())
        } else {
            (r.name_b.clone(), r.name_a.clone())
        };
        let vals = r
            .values
            .iter()
            .map(|v| match v {
                RawValue::Num(n) => format!("n{:016x}", n.to_bits()),
                RawValue::Cat(c) => format!("c{c}"),
            })
            .collect::<Vec<_>>()
            .join("|");
        // orientation-independent outcome for the key
        let y = if r.name_a <= r.name_b { r.y_first_listed } else { 1.0 - r.y_first_listed };
        (lo, hi, vals, y.to_bits())
    };
    let mut order: Vec<usize> = (0..raws.len()).collect();
    order.sort_by_key(|&i| sort_key(&raws[i]));

    let encode = |values: &[RawValue]| -> Result<Vec<f64>> {
        let mut x = Vec::new();
        for (ci, spec) in config.covariates.iter().enumerate() {
            match (&values[ci], spec.kind) {
                (RawValue::Num(v), CovariateKind::Numeric) => x.push(*v),
                (RawValue::Cat(c), CovariateKind::Categorical) => {
                    let dict = &categories[&spec.name];
                    let pos = dict.binary_search(c).map_err(|_| {
                        Error::Data(format!(
                            "category '{c}' in column '{}' never appears in the labeled data; \
                             the target distribution must be absolutely continuous with respect \
                             to the labeled one",
                            spec.name
                        ))
                    })?;
                    for j in 0..dict.len() {
                        x.push(f64::from(j == pos));
                    }
                }
                _ => unreachable!("kind checked at parse"),
            }
        }
        Ok(x)
    };

    let index_of = |name: &str| players.iter().position(|p| p == name).unwrap() + 1;
    let mut records = Vec::with_capacity(raws.len());
    let mut weights = Vec::new();
    for &i in &order {
        let r = &raws[i];
        let (ia, ib) = (index_of(&r.name_a), index_of(&r.name_b));
        let (pair, y) = if ia < ib {
            ((ia, ib), r.y_first_listed)
        } else {
            ((ib, ia), 1.0 - r.y_first_listed)
        };
        records.push(ComparisonRecord::new(encode(&r.values)?, pair, y));
        if let Some(w) = r.weight {
            weights.push(w);
        }
    }
    let weights = if weights.is_empty() { None } else { Some(weights) };

    // optional unlabeled covariates from the target population
    let unlabeled = match &config.unlabeled {
        None => Vec::new(),
        Some(upath) => {
            let (uheaders, urows) = read_csv(upath)?;
            let ucols: Vec<(usize, &CovariateSpec)> = config
                .covariates
                .iter()
                .map(|c| Ok((column_index(&uheaders, &c.name, upath)?, c)))
                .collect::<Result<_>>()?;
            let mut parsed = Vec::with_capacity(urows.len());
            for (i, rec) in urows.iter().enumerate() {
                let line = i + 2;
                let mut values = Vec::with_capacity(ucols.len());
                for (c, spec) in &ucols {
                    let raw = rec
                        .get(*c)
                        .ok_or_else(|| Error::Data(format!("line {line}: too few fields")))?;
                    values.push(parse_covariate(spec.kind, raw, line, &spec.name)?);
                }
                parsed.push(encode(&values)?);
            }
            parsed.sort_by(|a, b| a.partial_cmp(b).unwrap());
            parsed
        }
    };

    let dataset = ComparisonDataset::with_unlabeled(players.len(), records, unlabeled)?;
    Ok(ParsedLog { dataset, players, categories, weights })
}

fn scheme_from_config(config: &EstimateConfig, players: &[String]) -> Result<PairwiseScheme> {
    let k = players.len();
    match &config.rho {
        RhoConfig::Uniform(s) if s == "uniform" => PairwiseScheme::uniform(k),
        RhoConfig::Uniform(other) => Err(Error::Config(format!(
            "unknown sampling-scheme keyword '{other}', expected \"uniform\" or a table"
        ))),
        RhoConfig::Table(entries) => {
            let mut rho = vec![0.0; crate::types::num_pairs(k)];
            for e in entries {
                let ia = player_index(players, &e.pair.0)?;
                let ib = player_index(players, &e.pair.1)?;
                let (lo, hi) = if ia < ib { (ia, ib) } else { (ib, ia) };
                rho[crate::types::pair_index(k, lo, hi)?] = e.weight;
            }
            PairwiseScheme::new(k, rho)
        }
    }
}

fn player_index(players: &[String], name: &str) -> Result<usize> {
    players
        .iter()
        .position(|p| p == name)
        .map(|i| i + 1)
        .ok_or_else(|| Error::Config(format!("player '{name}' does not appear in the battle log")))
}

/// Run the configured regime on a parsed log.
pub fn estimate_from_parsed(config: &EstimateConfig, parsed: &ParsedLog) -> Result<Estimate> {
    let scheme = scheme_from_config(config, &parsed.players)?;
    let players = parsed.players.len();
    let bundle = fit_nuisances(players, &parsed.dataset, &config.learners, config.seed)?;
    let opts = SolverOptions::default();
    let gamma = || -> Result<ComparisonMatrix> {
        match &config.gamma_pairs {
            Some(pairs) => {
                let idx_pairs: Result<Vec<(usize, usize)>> = pairs
                    .iter()
                    .map(|(a, b)| {
                        let ia = player_index(&parsed.players, a)?;
                        let ib = player_index(&parsed.players, b)?;
                        Ok(if ia < ib { (ia, ib) } else { (ib, ia) })
                    })
                    .collect();
                ComparisonMatrix::new(players, idx_pairs?)
            }
            None => ComparisonMatrix::new(players, parsed.dataset.observed_pairs(players)),
        }
    };
    match (config.regime, config.estimand) {
        (Regime::NoShift, EstimandKind::Phi) => {
            one_step_phi(&scheme, &parsed.dataset, &bundle, &opts, config.ci_level)
        }
        (Regime::NoShift, EstimandKind::Psi) => {
            one_step_psi(&scheme, &parsed.dataset, &bundle, &opts, config.ci_level)
        }
        (Regime::Fusion, EstimandKind::Phi) => {
            one_step_phi_fusion(&scheme, &parsed.dataset, &bundle, &opts, config.ci_level)
        }
        (Regime::Fusion, EstimandKind::Psi) => {
            one_step_psi_fusion(&scheme, &parsed.dataset, &bundle, &opts, config.ci_level)
        }
        (Regime::CondBtIf, EstimandKind::Phi) => cond_bt_if_phi(
            &parsed.dataset,
            &bundle,
            &gamma()?,
            parsed.dataset.is_fusion(),
            config.ci_level,
        ),
        (Regime::CondBtIf, EstimandKind::Psi) => cond_bt_psi(
            &scheme,
            &parsed.dataset,
            &bundle,
            &CondPsiRoute::Fixed(gamma()?),
            &opts,
            parsed.dataset.is_fusion(),
            config.ci_level,
        ),
        (Regime::CondBtEif, EstimandKind::Phi) => cond_bt_eif_phi(
            &parsed.dataset,
            &bundle,
            players,
            &opts,
            parsed.dataset.is_fusion(),
            config.ci_level,
        ),
        (Regime::CondBtEif, EstimandKind::Psi) => cond_bt_psi(
            &scheme,
            &parsed.dataset,
            &bundle,
            &CondPsiRoute::Efficient,
            &opts,
            parsed.dataset.is_fusion(),
            config.ci_level,
        ),
        (Regime::KnownRatio, EstimandKind::Phi) => {
            let w = parsed.weights.as_ref().ok_or_else(|| {
                Error::Config("known-ratio regime needs a weight_column in the battle log".into())
            })?;
            known_ratio_phi(&scheme, &parsed.dataset, &bundle, w, &opts, config.ci_level)
        }
        (Regime::KnownRatio, EstimandKind::Psi) => Err(Error::Config(
            "the known-ratio regime is only available for the covariate-averaged estimand".into(),
        )),
    }
}

/// Build the ranking report from an estimate. The reference player leads
/// with a zero row; the remaining rows follow the player index order.
pub fn build_report(
    config: &EstimateConfig,
    parsed: &ParsedLog,
    estimate: &Estimate,
) -> RankingReport {
    let report = &estimate.report;
    let mut rows = vec![PlayerRow {
        name: parsed.players[0].clone(),
        estimate: 0.0,
        std: 0.0,
        ci: (0.0, 0.0),
    }];
    for (j, name) in parsed.players.iter().enumerate().skip(1) {
        rows.push(PlayerRow {
            name: name.clone(),
            estimate: report.point.as_slice()[j - 1],
            std: report.std_err(j - 1),
            ci: report.wald[j - 1],
        });
    }
    RankingReport {
        players: rows,
        regime: report.regime.to_string(),
        estimand: report.estimand.to_string(),
        diagnostics: report.diagnostics.clone(),
        config: config.clone(),
    }
}

/// Round half-up to two decimals, as in the printed ranking tables.
pub fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Render the report as a fixed-precision table; full precision stays in the
/// JSON.
pub fn render_table(report: &RankingReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:>9} {:>7} {:>16}\n",
        "player", "estimate", "std", "95% CI"
    ));
    for p in &report.players {
        out.push_str(&format!(
            "{:<24} {:>9.2} {:>7.2} ({:.2}, {:.2})\n",
            p.name,
            round2(p.estimate),
            round2(p.std),
            round2(p.ci.0),
            round2(p.ci.1),
        ));
    }
    out
}

/// Write bytes atomically: write to a sibling temp file, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Run an estimation config end to end; writes the report when an output
/// path is set and returns it either way.
pub fn cmd_estimate(config: &EstimateConfig) -> Result<RankingReport> {
    let parsed = parse_battle_log(config)?;
    if config.regime == Regime::Fusion && !parsed.dataset.is_fusion() {
        return Err(Error::Config("fusion regime needs an 'unlabeled' covariate file".into()));
    }
    let estimate = estimate_from_parsed(config, &parsed)?;
    let report = build_report(config, &parsed, &estimate);
    if let Some(path) = &config.output {
        let json = serde_json::to_vec_pretty(&report)
            .map_err(|e| Error::Data(format!("report serialization failed: {e}")))?;
        atomic_write(path, &json)?;
    }
    Ok(report)
}

/// CSV rendering of the metrics rows; shares the JSON column names.
pub fn metrics_csv(output: &ReplicationOutput) -> String {
    let mut out = String::from(
        "setting,arm,nuisance,estimator,player,truth,mean_estimate,sd_estimate,scaled_abs_bias,coverage,avg_ci_width,replications,failures\n",
    );
    for r in &output.rows {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.setting,
            r.arm,
            r.nuisance,
            r.estimator,
            r.player,
            r.truth,
            r.mean_estimate,
            r.sd_estimate,
            r.scaled_abs_bias,
            opt(r.coverage),
            opt(r.avg_ci_width),
            r.replications,
            r.failures
        ));
    }
    out
}

/// Run a simulation config end to end, writing the metrics files.
pub fn cmd_simulate(config: &SimulateConfig) -> Result<ReplicationOutput> {
    let output = run_replications(&config.spec, config.replications)?;
    if let Some(path) = &config.out_csv {
        atomic_write(path, metrics_csv(&output).as_bytes())?;
    }
    if let Some(path) = &config.out_json {
        let json = serde_json::to_vec_pretty(&output.rows)
            .map_err(|e| Error::Data(format!("metrics serialization failed: {e}")))?;
        atomic_write(path, &json)?;
    }
    Ok(output)
}

/// Fit the plain marginal model on the battle log by maximum likelihood,
/// ignoring covariates; the covariance is the inverse observed information.
/// A convenience baseline for comparing against the covariate-adjusted
/// estimates.
pub fn cmd_marginal_bt(config: &EstimateConfig) -> Result<RankingReport> {
    let parsed = parse_battle_log(config)?;
    let players = parsed.players.len();
    let dim = players - 1;
    let records = parsed.dataset.labeled();
    let observed = ComparisonMatrix::new(players, parsed.dataset.observed_pairs(players))?;
    if !observed.is_identifiable() {
        return Err(Error::Disconnected(
            "battle log does not connect all players; the fit is unidentified".into(),
        ));
    }

    let mut theta = nalgebra::DVector::zeros(dim);
    let strength = |t: &nalgebra::DVector<f64>, p: usize| if p == 1 { 0.0 } else { t[p - 2] };
    let observed_information = |t: &nalgebra::DVector<f64>| {
        let mut info = nalgebra::DMatrix::zeros(dim, dim);
        for r in records {
            let (k, l) = r.pair;
            let p = sigmoid(strength(t, k) - strength(t, l));
            let w = p * (1.0 - p);
            if k >= 2 {
                info[(k - 2, k - 2)] += w;
                info[(k - 2, l - 2)] -= w;
                info[(l - 2, k - 2)] -= w;
            }
            info[(l - 2, l - 2)] += w;
        }
        info
    };
    let mut iterations = 0u64;
    for _ in 0..200 {
        let mut grad = nalgebra::DVector::zeros(dim);
        for r in records {
            let (k, l) = r.pair;
            let p = sigmoid(strength(&theta, k) - strength(&theta, l));
            let g = r.y - p;
            if k >= 2 {
                grad[k - 2] += g;
            }
            grad[l - 2] -= g;
        }
        if grad.amax() < 1e-10 {
            break;
        }
        let step = observed_information(&theta)
            .cholesky()
            .ok_or_else(|| {
                Error::Disconnected(
                    "battle log does not connect all players; the fit is unidentified".into(),
                )
            })?
            .solve(&grad);
        theta += step;
        iterations += 1;
    }
    let cov = observed_information(&theta)
        .cholesky()
        .ok_or_else(|| Error::Disconnected("information matrix is singular".into()))?
        .inverse();
    let z = crate::numeric::normal_quantile(0.5 + config.ci_level / 2.0);

    let mut rows = vec![PlayerRow {
        name: parsed.players[0].clone(),
        estimate: 0.0,
        std: 0.0,
        ci: (0.0, 0.0),
    }];
    for (j, name) in parsed.players.iter().enumerate().skip(1) {
        let est = theta[j - 1];
        let std = cov[(j - 1, j - 1)].max(0.0).sqrt();
        rows.push(PlayerRow {
            name: name.clone(),
            estimate: est,
            std,
            ci: (est - z * std, est + z * std),
        });
    }
    let report = RankingReport {
        players: rows,
        regime: "marginal_bt".into(),
        estimand: "theta".into(),
        diagnostics: crate::types::Diagnostics {
            solver_iterations: iterations,
            n_labeled: parsed.dataset.n_labeled(),
            n_unlabeled: parsed.dataset.n_unlabeled(),
            ..Default::default()
        },
        config: config.clone(),
    };
    if let Some(path) = &config.output {
        let json = serde_json::to_vec_pretty(&report)
            .map_err(|e| Error::Data(format!("report serialization failed: {e}")))?;
        atomic_write(path, &json)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(dir: &tempfile::TempDir, name: &str, content: &str) -> PathBuf {
        let path = dir.path().join(name);
        std::fs::write(&path, content).unwrap();
        path
    }

    fn basic_config(log: PathBuf) -> EstimateConfig {
        EstimateConfig {
            battle_log: log,
            unlabeled: None,
            reference_player: "alpha".into(),
            estimand: EstimandKind::Phi,
            regime: Regime::NoShift,
            covariates: vec![CovariateSpec {
                name: "category".into(),
                kind: CovariateKind::Categorical,
            }],
            rho: RhoConfig::default(),
            gamma_pairs: None,
            weight_column: None,
            learners: NuisanceSpec {
                outcome: crate::nuisance::LearnerSpec::ConstantMean,
                propensity: crate::nuisance::LearnerSpec::Empirical,
                ratio: Some(crate::nuisance::LearnerSpec::Empirical),
                folds: 2,
                clip_eps: 0.01,
                ratio_cap: 20.0,
            },
            seed: 5,
            ci_level: 0.95,
            output: None,
        }
    }

    #[test]
    fn parse_orients_outcomes_toward_smaller_index() {
        let dir = tempfile::tempdir().unwrap();
        let log = write_tmp(
            &dir,
            "log.csv",
            "model_a,model_b,winner,category\n\
             gpt,alpha,model_b,coding\n\
             alpha,claude,model_b,math\n\
             claude,gpt,tie,math\n",
        );
        let config = basic_config(log);
        let parsed = parse_battle_log(&config).unwrap();
        // players: alpha (reference, 1), gpt (2), claude (3)
        assert_eq!(parsed.players, vec!["alpha", "gpt", "claude"]);
        // gpt vs alpha won by alpha: pair (1,2), y = 1
        // alpha vs claude won by claude: pair (1,3), y = 0
        // claude vs gpt tie: pair (2,3), y = 0.5
        let mut seen: Vec<((usize, usize), f64)> =
            parsed.dataset.labeled().iter().map(|r| (r.pair, r.y)).collect();
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(seen, vec![((1, 2), 1.0), ((1, 3), 0.0), ((2, 3), 0.5)]);
    }

    #[test]
    fn parse_one_hot_dictionary_is_sorted_and_persisted() {
        let dir = tempfile::tempdir().unwrap();
        let log = write_tmp(
            &dir,
            "log.csv",
            "model_a,model_b,winner,category\n\
             alpha,beta,model_a,zeta\n\
             alpha,beta,model_b,math\n",
        );
        let config = basic_config(log);
        let parsed = parse_battle_log(&config).unwrap();
        assert_eq!(parsed.categories["category"], vec!["math", "zeta"]);
        assert_eq!(parsed.dataset.labeled()[0].x.len(), 2);
    }

    #[test]
    fn parse_rejects_malformed_rows_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let log = write_tmp(
            &dir,
            "log.csv",
            "model_a,model_b,winner,category\n\
             alpha,beta,model_a,math\n\
             alpha,beta,alpha,math\n",
        );
        let config = basic_config(log);
        let err = format!("{}", parse_battle_log(&config).unwrap_err());
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn estimates_are_invariant_to_row_permutation() {
        let dir = tempfile::tempdir().unwrap();
        let mut rows = Vec::new();
        for i in 0..12 {
            let (a, b) = match i % 3 {
                0 => ("alpha", "beta"),
                1 => ("beta", "gamma"),
                _ => ("alpha", "gamma"),
            };
            let w = match i % 4 {
                0 => "model_a",
                1 => "model_b",
                2 => "tie",
                _ => "model_a",
            };
            let cat = if i % 2 == 0 { "math" } else { "coding" };
            rows.push(format!("{a},{b},{w},{cat}"));
        }
        let header = "model_a,model_b,winner,category\n";
        let log1 = write_tmp(&dir, "a.csv", &format!("{header}{}\n", rows.join("\n")));
        let mut rev = rows.clone();
        rev.reverse();
        let log2 = write_tmp(&dir, "b.csv", &format!("{header}{}\n", rev.join("\n")));
        let r1 = cmd_estimate(&basic_config(log1)).unwrap();
        let r2 = cmd_estimate(&basic_config(log2)).unwrap();
        // player indices depend on first appearance, so match rows by name
        for a in &r1.players {
            let b = r2.players.iter().find(|p| p.name == a.name).unwrap();
            assert!((a.estimate - b.estimate).abs() < 1e-10, "{}", a.name);
        }
    }

    #[test]
    fn tie_counts_as_half_win() {
        let dir = tempfile::tempdir().unwrap();
        let log = write_tmp(
            &dir,
            "log.csv",
            "model_a,model_b,winner,category\n\
             alpha,beta,model_a,math\n\
             alpha,beta,tie,math\n\
             alpha,beta,model_a,math\n\
             alpha,beta,tie,math\n",
        );
        let config = basic_config(log);
        let parsed = parse_battle_log(&config).unwrap();
        let ys: Vec<f64> = parsed.dataset.labeled().iter().map(|r| r.y).collect();
        assert_eq!(ys.iter().sum::<f64>() / ys.len() as f64, 0.75);
    }

    #[test]
    fn report_round_trips_byte_identically_from_embedded_config() {
        let dir = tempfile::tempdir().unwrap();
        let mut rows = String::from("model_a,model_b,winner,category\n");
        for i in 0..30 {
            let (a, b) = match i % 3 {
                0 => ("alpha", "beta"),
                1 => ("beta", "gamma"),
                _ => ("alpha", "gamma"),
            };
            let w = if i % 2 == 0 { "model_a" } else { "model_b" };
            let cat = if i % 4 == 0 { "math" } else { "coding" };
            rows.push_str(&format!("{a},{b},{w},{cat}\n"));
        }
        let log = write_tmp(&dir, "log.csv", &rows);
        let config = basic_config(log);
        let report1 = cmd_estimate(&config).unwrap();
        let bytes1 = serde_json::to_vec_pretty(&report1).unwrap();
        let report2 = cmd_estimate(&report1.config).unwrap();
        let bytes2 = serde_json::to_vec_pretty(&report2).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let json = r#"{
            "battle_log": "x.csv",
            "reference_player": "a",
            "estimand": "phi",
            "regime": "no_shift",
            "covariates": [],
            "bogus_key": 1
        }"#;
        let parsed: std::result::Result<EstimateConfig, _> = serde_json::from_str(json);
        assert!(parsed.is_err());
    }

    #[test]
    fn rounding_matches_published_table_style() {
        assert_eq!(round2(1.536), 1.54);
        assert_eq!(round2(0.089), 0.09);
        assert_eq!(round2(1.536 - 1.959964 * 0.089), 1.36);
        assert_eq!(round2(1.536 + 1.959964 * 0.089), 1.71);
    }

    #[test]
    fn marginal_bt_recovers_log_odds_on_two_player_log() {
        let dir = tempfile::tempdir().unwrap();
        let mut rows = String::from("model_a,model_b,winner,category\n");
        // beta beats alpha 3 times out of 4
        for i in 0..40 {
            let w = if i % 4 == 0 { "model_a" } else { "model_b" };
            rows.push_str(&format!("alpha,beta,{w},math\n"));
        }
        let log = write_tmp(&dir, "log.csv", &rows);
        let config = basic_config(log);
        let report = cmd_marginal_bt(&config).unwrap();
        assert_eq!(report.players[0].name, "alpha");
        let beta = &report.players[1];
        assert!((beta.estimate - (0.75f64 / 0.25).ln()).abs() < 1e-6);
        assert!(beta.std > 0.0);
    }

    #[test]
    fn unseen_unlabeled_category_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let log = write_tmp(
            &dir,
            "log.csv",
            "model_a,model_b,winner,category\n\
             alpha,beta,model_a,math\n\
             alpha,beta,model_b,math\n",
        );
        let unlab = write_tmp(&dir, "u.csv", "category\nmath\npoetry\n");
        let mut config = basic_config(log);
        config.unlabeled = Some(unlab);
        config.regime = Regime::Fusion;
        let err = format!("{}", cmd_estimate(&config).unwrap_err());
        assert!(err.contains("absolutely continuous"), "{err}");
    }
}
