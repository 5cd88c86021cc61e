use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use macnet::data::{gen_synthetic, load_manifest, save_dataset, split, Dataset};
use macnet::metrics::roc_points;
use macnet::model::{
    check_gradients, evaluate, history_csv, load_checkpoint, save_checkpoint, train_split, Ablation, ModelParams,
    TrainConfig,
};
use macnet::{Error, Result};

use crate::args::{read_config, AblateArgs, EvalArgs, GenArgs, GradcheckArgs, SplitPart, TrainArgs};

/// Outcome of a command that ran to completion but may still report failure.
pub enum Status {
    Ok,
    Failed(String),
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn gen(args: &GenArgs) -> Result<Status> {
    let file = read_config(args.config.as_deref())?;
    let cfg = args.synth.apply(file.synth);
    cfg.validate()?;
    let ds = gen_synthetic(&cfg)?;
    let manifest = save_dataset(&ds, &args.out)?;
    println!("{}", ds.summary());
    println!("wrote {}", manifest.display());
    Ok(Status::Ok)
}

fn train_config(config: Option<&Path>, flags: &crate::args::TrainFlags) -> Result<TrainConfig> {
    let file = read_config(config)?;
    flags.apply(file.train)
}

pub fn train(args: &TrainArgs) -> Result<Status> {
    let cfg = train_config(args.config.as_deref(), &args.train)?;
    let ds = load_manifest(&args.data)?;
    let (tr, val) = split(&ds, cfg.train_fraction, cfg.seed)?;
    let out = train_split(&tr, &val, &cfg)?;
    create_dir(&args.out)?;
    save_checkpoint(&args.out.join("checkpoint.json"), &out.params, &cfg, out.best_epoch)?;
    write(&args.out.join("history.csv"), &history_csv(&out.history))?;
    let best = out.best();
    println!(
        "cell {}/{}/{}: best epoch {} of {}, val acc {:.4}, val auc {:.4}",
        cfg.ablation.embedding,
        cfg.ablation.metric,
        cfg.ablation.aggregation,
        best.epoch,
        cfg.epochs,
        best.acc,
        best.auc
    );
    println!("wrote {}", args.out.display());
    Ok(Status::Ok)
}

fn select(ds: &Dataset, part: SplitPart, cfg: &TrainConfig) -> Result<Dataset> {
    if part == SplitPart::All {
        return Ok(ds.clone());
    }
    let (tr, val) = split(ds, cfg.train_fraction, cfg.seed)?;
    Ok(if part == SplitPart::Train { tr } else { val })
}

fn optional(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

pub fn eval(args: &EvalArgs) -> Result<Status> {
    let (params, ck) = load_checkpoint(&args.checkpoint)?;
    let cfg = ck.config;
    let ds = select(&load_manifest(&args.data)?, args.split, &cfg)?;
    let ev = evaluate(&params, &ds, &cfg)?;
    let r = &ev.report;
    create_dir(&args.out)?;

    let mut metrics = String::from("metric,value\n");
    writeln!(metrics, "accuracy,{}", r.accuracy).unwrap();
    writeln!(metrics, "auc_macro_ovr,{}", r.auc_macro_ovr).unwrap();
    writeln!(metrics, "role_accuracy,{}", optional(r.role_accuracy)).unwrap();
    writeln!(metrics, "role_ari,{}", optional(r.role_ari)).unwrap();
    writeln!(metrics, "eta_squared,{}", optional(r.eta_squared)).unwrap();
    write(&args.out.join("metrics.csv"), &metrics)?;

    let mut cm = String::from("actual");
    for c in 0..ds.classes {
        write!(cm, ",pred_{c}").unwrap();
    }
    cm.push('\n');
    for (c, row) in r.confusion.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        writeln!(cm, "{c},{}", cells.join(",")).unwrap();
    }
    write(&args.out.join("confusion.csv"), &cm)?;

    let labels = ds.labels();
    let mut roc = String::from("class,threshold,fpr,tpr\n");
    for c in 0..ds.classes {
        let scores: Vec<f64> = ev.probs.column(c).iter().copied().collect();
        let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        for p in roc_points(&scores, &positive) {
            writeln!(roc, "{c},{},{},{}", p.threshold, p.fpr, p.tpr).unwrap();
        }
    }
    write(&args.out.join("roc.csv"), &roc)?;

    let mut roles = String::from("bag,instance,cluster,role,true_role\n");
    for (bag, t) in ds.bags.iter().zip(&ev.traces) {
        for (i, (&a, role)) in t.assignments.iter().zip(t.instance_roles()).enumerate() {
            let truth = bag.true_roles.as_ref().map_or(String::new(), |r| r[i].to_string());
            writeln!(roles, "{},{i},{a},{role},{truth}", bag.id).unwrap();
        }
    }
    write(&args.out.join("roles.csv"), &roles)?;

    let mut report = String::new();
    writeln!(report, "split     {:?}", args.split).unwrap();
    writeln!(report, "bags      {}", ds.bags.len()).unwrap();
    writeln!(report, "cell      {}/{}/{}", cfg.ablation.embedding, cfg.ablation.metric, cfg.ablation.aggregation).unwrap();
    writeln!(report).unwrap();
    writeln!(report, "{:<10} {:>8} {:>8}", "dataset", "ACC", "AUC").unwrap();
    let name = args.data.file_stem().map_or("data".into(), |s| s.to_string_lossy().into_owned());
    writeln!(report, "{:<10} {:>8.4} {:>8.4}", name, r.accuracy, r.auc_macro_ovr).unwrap();
    if let (Some(acc), Some(ari)) = (r.role_accuracy, r.role_ari) {
        writeln!(report, "\nrole accuracy {acc:.4}, role ARI {ari:.4}").unwrap();
    }
    if let Some(eta) = r.eta_squared {
        writeln!(report, "eta squared   {eta:.4}").unwrap();
    }
    write(&args.out.join("report.txt"), &report)?;
    print!("{report}");
    Ok(Status::Ok)
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<Status> {
    let file = read_config(args.config.as_deref())?;
    let cfg = args.train.apply(file.train)?;
    let ds = match &args.data {
        Some(path) => load_manifest(path)?,
        None => gen_synthetic(&file.synth)?,
    };
    let params = match &args.checkpoint {
        Some(path) => load_checkpoint(path)?.0,
        None => ModelParams::init(ds.raw_dim(), cfg.feature_dim, ds.classes, cfg.seed)?,
    };
    let bag = &ds.bags[ChaCha8Rng::seed_from_u64(cfg.seed).random_range(0..ds.bags.len())];
    let report = check_gradients(&params, bag, &cfg, &args.param.groups(), args.corrupt)?;
    println!("bag {}", report.bag);
    for g in &report.groups {
        println!(
            "{:<11} {:>5} entries  max rel err {:.3e}  {}",
            g.group,
            g.entries,
            g.max_rel_error,
            if g.passed() { "ok" } else { "FAILED" }
        );
    }
    if report.passed() {
        Ok(Status::Ok)
    } else {
        let failed: Vec<&str> = report.groups.iter().filter(|g| !g.passed()).map(|g| g.group).collect();
        Ok(Status::Failed(format!("gradient check failed for {}", failed.join(", "))))
    }
}

pub fn ablate(args: &AblateArgs) -> Result<Status> {
    let base = train_config(args.config.as_deref(), &args.train)?;
    let ds = load_manifest(&args.data)?;
    let (tr, val) = split(&ds, base.train_fraction, base.seed)?;
    let cells: Vec<(&str, TrainConfig)> = Ablation::cells()
        .into_iter()
        .map(|(name, ablation)| (name, TrainConfig { ablation, ..base.clone() }))
        .collect();
    for (_, cfg) in &cells {
        cfg.validate()?;
    }
    let mut csv = String::from("cell,embedding,metric,aggregation,seed,best_epoch,val_acc,val_auc\n");
    for (name, cfg) in cells {
        let ablation = cfg.ablation;
        let out = train_split(&tr, &val, &cfg)?;
        let best = out.best();
        println!("{name:<20} acc {:.4}  auc {:.4}", best.acc, best.auc);
        writeln!(
            csv,
            "{name},{},{},{},{},{},{},{}",
            ablation.embedding, ablation.metric, ablation.aggregation, cfg.seed, best.epoch, best.acc, best.auc
        )
        .unwrap();
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write(&args.out, &csv)?;
    println!("wrote {}", args.out.display());
    Ok(Status::Ok)
}
