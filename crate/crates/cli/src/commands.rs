use std::path::{Path, PathBuf};

use dpkit::analysis::{lf_summary, render_report};
use dpkit::applier::{Matrices, Orientation};
use dpkit::config::Config;
use dpkit::jointlearn::{fit_and_predict_proba, Head, JlConfig, JlFit, JlParams, SplitView};
use dpkit::labelmodels::{
    accuracy, cage_fit, cage_predict, estimate_guides, mv_predict, predictions_to_jsonl, CageParams,
    EvalSet, Prediction, TrainConfig, TrainLog,
};
use dpkit::lfkit::RuleSet;
use dpkit::subset::{self, IndicesFile, Method, Similarity};
use dpkit::synth;
use dpkit::types::validate_dataset;
use dpkit::{DataSplit, Error, LabelId, Result, Role};

use crate::{similarity, Cli, Command, OptimizerArgs, SubsetArgs, TrainCommand};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    match cli.command {
        Command::Apply {
            rules,
            data,
            out,
            orientation,
            role,
        } => apply(&rules, &data, role.into(), &out, orientation.into()),
        Command::Analyze { matrix, gold, out } => analyze(&matrix, gold.as_deref(), out.as_deref()),
        Command::Train(TrainCommand::Cage {
            matrix,
            labeled,
            test,
            params_out,
            log_out,
            opt,
        }) => {
            override_cage(&mut cfg.cage, &opt);
            let u = Matrices::load(&matrix)?;
            let l = labeled.as_deref().map(Matrices::load).transpose()?;
            let t = test.as_deref().map(Matrices::load).transpose()?;
            let (params, log) = train_cage(&u, l.as_ref(), t.as_ref(), &cfg.cage)?;
            params.save(&params_out)?;
            write_log(&log, log_out.as_deref(), &params_out)?;
            println!("cage: {} epochs, objective {:.6}", cfg.cage.epochs, last(&log));
            Ok(())
        }
        Command::Train(TrainCommand::Jl {
            rules,
            labeled,
            unlabeled,
            val,
            test,
            params_out,
            log_out,
            only_l,
            opt,
        }) => {
            let mut jl = cfg.jl.clone();
            if only_l {
                jl = JlConfig {
                    epochs: jl.epochs,
                    learning_rate: jl.learning_rate,
                    seed: jl.seed,
                    ..JlConfig::only_l(jl.arch)
                };
            }
            override_jl(&mut jl, &opt);
            let rules = RuleSet::load(&rules)?;
            let l = load_split(Role::L, &labeled, &rules)?;
            let u = load_split(Role::U, &unlabeled, &rules)?;
            let v = val.map(|p| load_split(Role::V, &p, &rules)).transpose()?;
            let t = test.map(|p| load_split(Role::T, &p, &rules)).transpose()?;
            let fit = train_jl(&l, &u, v.as_ref(), t.as_ref(), rules.space.k(), &jl)?;
            fit.params.save(&params_out)?;
            write_log(&fit.log, log_out.as_deref(), &params_out)?;
            println!("jl: {} epochs, objective {:.6}", jl.epochs, last(&fit.log));
            if let Some(e) = fit.log.selected_epoch {
                println!("selected epoch {e}");
            }
            Ok(())
        }
        Command::Predict {
            params,
            matrix,
            data,
            rules,
            out,
        } => predict(&params, matrix.as_deref(), data.as_deref(), rules.as_deref(), &out),
        Command::Subset(args) => subset_cmd(&cfg, args),
        Command::Demo { out } => demo(&cfg, &out),
    }
}

fn override_cage(cfg: &mut TrainConfig, opt: &OptimizerArgs) {
    if let Some(e) = opt.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = opt.learning_rate {
        cfg.learning_rate = lr;
    }
}

fn override_jl(cfg: &mut JlConfig, opt: &OptimizerArgs) {
    if let Some(e) = opt.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = opt.learning_rate {
        cfg.learning_rate = lr;
    }
}

fn last(log: &TrainLog) -> f64 {
    log.objective.last().copied().unwrap_or(f64::NAN)
}

fn write_log(log: &TrainLog, path: Option<&Path>, params_out: &Path) -> Result<()> {
    let path = path.map_or_else(|| params_out.with_extension("log.json"), Path::to_path_buf);
    let body = serde_json::to_string_pretty(log).expect("log serializes");
    std::fs::write(&path, body).map_err(|source| Error::Io { path, source })
}

fn write(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// A dataset with its rules applied.
struct Loaded {
    split: DataSplit,
    m: Matrices,
    features: Vec<f64>,
    d: usize,
    gold: Option<Vec<LabelId>>,
}

impl Loaded {
    fn new(split: DataSplit, rules: &RuleSet) -> Result<Self> {
        validate_dataset(&split, &rules.space).into_result()?;
        let m = Matrices::from_split(&rules.rules, &split, &rules.space)?;
        let (features, d) = split.require_features()?;
        let gold = split.role.requires_gold().then(|| split.require_gold()).transpose()?;
        Ok(Loaded {
            split,
            m,
            features,
            d,
            gold,
        })
    }

    fn view(&self) -> SplitView<'_> {
        SplitView {
            features: &self.features,
            d: self.d,
            votes: &self.m.votes,
            scores: &self.m.scores,
            gold: self.gold.as_deref(),
        }
    }
}

fn load_split(role: Role, path: &Path, rules: &RuleSet) -> Result<Loaded> {
    Loaded::new(DataSplit::load(role, path)?, rules).map_err(|e| e.in_file(path))
}

fn apply(rules: &Path, data: &Path, role: Role, out: &Path, orientation: Orientation) -> Result<()> {
    let rules = RuleSet::load(rules)?;
    let split = DataSplit::load(role, data)?;
    validate_dataset(&split, &rules.space)
        .into_result()
        .map_err(|e| e.in_file(data))?;
    let m = Matrices::from_split(&rules.rules, &split, &rules.space)?;
    m.save(out, orientation)?;
    println!("n = {}, m = {}", m.n(), m.votes.m());
    for s in lf_summary(&m.votes, None)? {
        println!("  {}: coverage {:.4}", s.name, s.coverage);
    }
    Ok(())
}

fn analyze(matrix: &Path, gold: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let m = Matrices::load(matrix)?;
    let gold = match gold {
        Some(p) => Some(align_gold(&m, &DataSplit::load(Role::U, p)?).map_err(|e| e.in_file(p))?),
        None => m.gold.clone(),
    };
    let summaries = lf_summary(&m.votes, gold.as_deref())?;
    let report = render_report(&summaries);
    print!("{}", report.table);
    if let Some(out) = out {
        write(out, &serde_json::to_string_pretty(&report.record).expect("report serializes"))?;
    }
    Ok(())
}

/// Gold for each matrix row, matched by id when the matrix carries ids.
fn align_gold(m: &Matrices, split: &DataSplit) -> Result<Vec<Option<LabelId>>> {
    match &m.ids {
        Some(ids) => {
            let by_id: std::collections::HashMap<&str, Option<LabelId>> = split
                .instances
                .iter()
                .map(|i| (i.id.as_str(), i.label))
                .collect();
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| Error::Data(format!("gold: no instance with id {id:?}")))
                })
                .collect()
        }
        None if split.len() == m.n() => Ok(split.gold()),
        None => Err(Error::Data(format!(
            "gold: {} instances for {} matrix rows",
            split.len(),
            m.n()
        ))),
    }
}

fn same_lfs(a: &Matrices, b: &Matrices, what: &str) -> Result<()> {
    if a.votes.lf_targets() != b.votes.lf_targets()
        || a.votes.lf_is_continuous() != b.votes.lf_is_continuous()
    {
        return Err(Error::Data(format!("{what}: LF set differs from the training matrix")));
    }
    Ok(())
}

fn train_cage(
    u: &Matrices,
    l: Option<&Matrices>,
    t: Option<&Matrices>,
    cfg: &TrainConfig,
) -> Result<(CageParams, TrainLog)> {
    let guides = match l {
        Some(l) => {
            same_lfs(u, l, "labeled")?;
            let gold = l.gold.as_ref().ok_or_else(|| Error::Data("labeled: matrix has no gold".into()))?;
            Some(estimate_guides(&l.votes, gold)?)
        }
        None => None,
    };
    let t_gold = t.map(|t| t.require_gold()).transpose()?;
    let eval = match (t, &t_gold) {
        (Some(t), Some(g)) => {
            same_lfs(u, t, "test")?;
            Some(EvalSet {
                votes: &t.votes,
                scores: &t.scores,
                gold: g,
            })
        }
        _ => None,
    };
    cage_fit(&u.votes, &u.scores, u.space.k(), guides.as_deref(), cfg, eval)
}

fn train_jl(
    l: &Loaded,
    u: &Loaded,
    v: Option<&Loaded>,
    t: Option<&Loaded>,
    k: usize,
    cfg: &JlConfig,
) -> Result<JlFit> {
    let v = v.map(Loaded::view);
    let t = t.map(Loaded::view);
    fit_and_predict_proba(&l.view(), &u.view(), v.as_ref(), t.as_ref(), k, cfg)
}

fn ids_or_index(ids: Option<&[String]>, n: usize) -> Vec<String> {
    match ids {
        Some(ids) => ids.to_vec(),
        None => (0..n).map(|i| i.to_string()).collect(),
    }
}

fn to_predictions(ids: Vec<String>, proba: Vec<Vec<f64>>) -> Vec<Prediction> {
    ids.into_iter().zip(proba).map(|(id, p)| Prediction::new(id, p)).collect()
}

fn predict(
    params: &Path,
    matrix: Option<&Path>,
    data: Option<&Path>,
    rules: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let body = std::fs::read_to_string(params).map_err(|source| Error::Io {
        path: params.to_path_buf(),
        source,
    })?;
    let model = serde_json::from_str::<serde_json::Value>(&body)
        .ok()
        .and_then(|v| v.get("model").and_then(|m| m.as_str()).map(String::from))
        .ok_or_else(|| Error::Data(format!("{}: corrupt params file", params.display())))?;
    let split = data.map(|p| DataSplit::load(Role::U, p)).transpose()?;
    let lf_outputs = || -> Result<Matrices> {
        match (matrix, &split, rules) {
            (Some(p), _, _) => Matrices::load(p),
            (None, Some(s), Some(r)) => {
                let rules = RuleSet::load(r)?;
                Matrices::from_split(&rules.rules, s, &rules.space)
            }
            _ => Err(Error::Config("predict: need --matrix, or --data with --rules".into())),
        }
    };
    let preds = match model.as_str() {
        "cage" => {
            let p = CageParams::from_json_str(&body).map_err(|e| e.in_file(params))?;
            let m = lf_outputs()?;
            let proba = p.posterior_matrix(&m.votes, &m.scores)?;
            let ids = match &split {
                Some(s) => s.instances.iter().map(|i| i.id.clone()).collect(),
                None => ids_or_index(m.ids.as_deref(), m.n()),
            };
            to_predictions(ids, proba)
        }
        "jl" => {
            let p = JlParams::from_json_str(&body).map_err(|e| e.in_file(params))?;
            let split = split
                .as_ref()
                .ok_or_else(|| Error::Config("predict: jl needs --data for features".into()))?;
            let (x, d) = split.require_features()?;
            let proba = if p.head == Head::Fm {
                p.predict_proba(Head::Fm, &x, d, None)?
            } else {
                let m = lf_outputs()?;
                p.predict_proba(p.head, &x, d, Some((&m.votes, &m.scores)))?
            };
            to_predictions(split.instances.iter().map(|i| i.id.clone()).collect(), proba)
        }
        other => {
            return Err(Error::Data(format!(
                "{}: model: unknown model {other:?}",
                params.display()
            )))
        }
    };
    write(out, &predictions_to_jsonl(&preds))?;
    println!("{} predictions", preds.len());
    Ok(())
}

fn subset_cmd(cfg: &Config, args: SubsetArgs) -> Result<()> {
    let method = args.method.map_or(cfg.subset.method, Into::into);
    let k = args.k.unwrap_or(cfg.subset.k);
    let sim = similarity(args.similarity, args.sigma, cfg.subset.similarity);
    let split = args.data.as_deref().map(|p| DataSplit::load(Role::U, p)).transpose()?;
    let matrix = args.matrix.as_deref().map(Matrices::load).transpose()?;
    let file = select(method, k, cfg.subset.seed, sim, split.as_ref(), matrix.as_ref())?;
    file.save(&args.out)?;
    if let Some(prefix) = &args.save_prefix {
        let split = split
            .as_ref()
            .ok_or_else(|| Error::Config("subset: --save-prefix needs --data".into()))?;
        let (l, u) = subset::save_split_files(split, &file.indices, prefix)?;
        println!("wrote {} and {}", l.display(), u.display());
    }
    println!("{} indices", file.indices.len());
    Ok(())
}

fn select(
    method: Method,
    k: usize,
    seed: u64,
    sim: Similarity,
    split: Option<&DataSplit>,
    matrix: Option<&Matrices>,
) -> Result<IndicesFile> {
    let need_data = || Error::Config("subset: this method needs --data".into());
    let (indices, objective_value, seed) = match method {
        Method::Rand => {
            let n = match (split, matrix) {
                (Some(s), _) => s.len(),
                (None, Some(m)) => m.n(),
                _ => return Err(Error::Config("subset: rand needs --data or --matrix".into())),
            };
            (subset::rand_subset(n, k, seed)?, None, Some(seed))
        }
        Method::Fl => {
            let (x, d) = split.ok_or_else(need_data)?.require_features()?;
            let s = subset::unsup_subset(&x, d, k, sim)?;
            (s.indices, Some(s.objective_value), None)
        }
        Method::Sup => {
            let split = split.ok_or_else(need_data)?;
            let (x, d) = split.require_features()?;
            let s = subset::sup_subset(&x, d, &split.require_gold()?, k, sim)?;
            (s.indices, Some(s.objective_value), None)
        }
        Method::Maxcover => {
            let m = matrix.ok_or_else(|| Error::Config("subset: maxcover needs --matrix".into()))?;
            let s = subset::max_cover_subset(&m.votes, k)?;
            (s.indices, Some(s.objective_value), None)
        }
    };
    Ok(IndicesFile {
        method,
        k,
        seed,
        indices,
        objective_value,
    })
}

/// Result of the demo run, written as `summary.json`.
#[derive(serde::Serialize)]
struct Summary {
    n_l: usize,
    n_u: usize,
    n_t: usize,
    mv_accuracy: f64,
    cage_accuracy: f64,
    jl_accuracy: f64,
}

fn demo(cfg: &Config, dir: &Path) -> Result<()> {
    let data = synth::generate(&cfg.synth)?;
    data.write(dir)?;
    let p = |name: &str| -> PathBuf { dir.join(name) };
    let rules = &data.rules;

    let mut loaded = Vec::new();
    for split in [&data.l, &data.u, &data.v, &data.t] {
        let name = split.role.to_string().to_lowercase();
        let l = Loaded::new(split.clone(), rules)?;
        l.m.save(&p(&format!("{name}.matrix.json")), Orientation::Instances)?;
        loaded.push(l);
    }
    let [l, u, v, t] = <[Loaded; 4]>::try_from(loaded).ok().expect("four splits");

    let report = render_report(&lf_summary(&l.m.votes, l.m.gold.as_deref())?);
    print!("{}", report.table);
    write(&p("analysis.json"), &serde_json::to_string_pretty(&report.record).expect("report"))?;

    let k = cfg.subset.k.min(u.split.len());
    let file = select(cfg.subset.method, k, cfg.subset.seed, cfg.subset.similarity, Some(&u.split), Some(&u.m))?;
    file.save(&p("subset.json"))?;

    let (cage, cage_log) = train_cage(&u.m, Some(&l.m), Some(&t.m), &cfg.cage)?;
    cage.save(&p("cage.params.json"))?;
    write_log(&cage_log, None, &p("cage.params.json"))?;

    let fit = train_jl(&l, &u, Some(&v), Some(&t), data.space.k(), &cfg.jl)?;
    fit.params.save(&p("jl.params.json"))?;
    write_log(&fit.log, None, &p("jl.params.json"))?;

    let t_ids: Vec<String> = t.split.instances.iter().map(|i| i.id.clone()).collect();
    let jl_proba = fit.params.predict_proba(fit.params.head, &t.features, t.d, Some((&t.m.votes, &t.m.scores)))?;
    let jl_preds = to_predictions(t_ids.clone(), jl_proba);
    write(&p("predictions.jsonl"), &predictions_to_jsonl(&jl_preds))?;
    let cage_preds = to_predictions(t_ids, cage.posterior_matrix(&t.m.votes, &t.m.scores)?);
    write(&p("cage.predictions.jsonl"), &predictions_to_jsonl(&cage_preds))?;

    let gold = t.gold.as_deref().expect("T has gold");
    let jl_labels: Vec<LabelId> = jl_preds.iter().map(|p| p.label).collect();
    let summary = Summary {
        n_l: l.split.len(),
        n_u: u.split.len(),
        n_t: t.split.len(),
        mv_accuracy: accuracy(&mv_predict(&t.m.votes), gold),
        cage_accuracy: accuracy(&cage_predict(&cage, &t.m.votes, &t.m.scores)?, gold),
        jl_accuracy: accuracy(&jl_labels, gold),
    };
    write(&p("summary.json"), &serde_json::to_string_pretty(&summary).expect("summary"))?;
    println!(
        "T accuracy: majority vote {:.4}, cage {:.4}, jl {:.4}",
        summary.mv_accuracy, summary.cage_accuracy, summary.jl_accuracy
    );
    Ok(())
}
