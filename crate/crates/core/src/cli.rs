//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::attention::export_attention;
use crate::backbone::{extract_features, save_feature_file, Backbone, BackboneKind};
use crate::error::{IqtError, Result};
use crate::eval::{ablation_configs, ablation_table, evaluate_rows, report_table, run_ablation, write_report_csv, ReportRow};
use crate::io::{decode_image, parse_manifest, write_manifest, write_ppm, ManifestRow, RunConfig, CONFIG_ENV};
use crate::model::{DiffLevel, ModelConfig, Preset, Routing, Stream};
use crate::pipeline::{
    load_checkpoint, load_pair, load_samples, save_checkpoint, score_pair_data, train_samples, write_loss_log,
    AugmentFlags, PairData, TrainConfig,
};

#[derive(Parser, Debug)]
#[command(name = "iqt", version, about = "Full-reference image quality assessment with a transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Hyper-parameter preset: iqt, iqt-c or tiny.
    #[arg(long)]
    preset: Option<String>,
    /// `key = value` settings file (default: $IQT_CONFIG).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a setting, e.g. `--set lr0=1e-3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on a manifest and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Print the quality score of one image pair.
    Score {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long = "dist")]
        distorted: PathBuf,
    },
    /// Correlate checkpoint predictions with the MOS of a manifest.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train and evaluate every input routing with a shared budget.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Evaluation manifest (default: the training manifest).
        #[arg(long)]
        eval_manifest: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Write an attention heat map for the centre patch of a pair.
    AttnExport {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long = "dist")]
        distorted: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the toy backbone over images and store IQTF feature files.
    ExtractFeatures {
        #[command(flatten)]
        common: Common,
        /// Single image to process.
        #[arg(long, conflicts_with = "manifest")]
        image: Option<PathBuf>,
        /// Process every image of a manifest and write a feature manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Resolved settings: file values overlaid with command-line values.
struct Settings {
    run: RunConfig,
}

fn parse_routing(s: &str) -> Result<Routing> {
    if let Some(c) = ablation_configs().into_iter().find(|c| c.id == s) {
        return Ok(c.routing);
    }
    let stream = |name: &str| match name.trim() {
        "dist" => Ok(Stream::Dist),
        "ref" => Ok(Stream::Ref),
        "diff" => Ok(Stream::Diff),
        other => Err(IqtError::Config(format!("unknown stream `{other}` (dist, ref, diff)"))),
    };
    let (e, d) = s.split_once(',').ok_or_else(|| {
        IqtError::Config(format!("routing `{s}` must be 1-8, `image`, or `encoder,decoder`"))
    })?;
    Ok(Routing {
        encoder: stream(e)?,
        decoder: stream(d)?,
        diff_level: DiffLevel::Feature,
    })
}

impl Settings {
    fn resolve(common: &Common, extra: &[(&str, Option<String>)]) -> Result<Self> {
        let file = match &common.config {
            Some(p) => Some(p.clone()),
            None => std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from),
        };
        let base = match file {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::new(),
        };
        let mut over = RunConfig::new();
        for kv in &common.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| IqtError::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            over.set(k.trim(), v.trim())?;
        }
        if let Some(p) = &common.preset {
            over.set("preset", p)?;
        }
        if let Some(s) = common.seed {
            over.set("seed", &s.to_string())?;
        }
        for (k, v) in extra {
            if let Some(v) = v {
                over.set(k, v)?;
            }
        }
        Ok(Settings { run: base.merged(&over) })
    }

    fn model_config(&self) -> Result<ModelConfig> {
        let r = &self.run;
        let preset = Preset::parse(r.get_str("preset").unwrap_or("iqt"))?;
        let mut cfg = preset.config();
        if let Some(kind) = r.get_str("backbone") {
            cfg.backbone.kind = BackboneKind::parse(kind)?;
            if cfg.backbone.kind == BackboneKind::ToyCnn && cfg.backbone.stem_channels == 0 {
                cfg.backbone.stem_channels = 8;
            }
        }
        let t = &mut cfg.transformer;
        for (key, slot) in [
            ("layers", &mut t.layers),
            ("heads", &mut t.n_heads),
            ("d_model", &mut t.d_model),
            ("d_feat", &mut t.d_feat),
            ("d_head", &mut t.d_head),
            ("stages", &mut cfg.backbone.stages),
            ("stage_channels", &mut cfg.backbone.stage_channels),
            ("stem_channels", &mut cfg.backbone.stem_channels),
            ("patch_size", &mut cfg.patch_size),
        ] {
            if let Some(v) = r.get::<usize>(key)? {
                *slot = v;
            }
        }
        if let Some(s) = r.get_str("routing") {
            cfg.routing = parse_routing(s)?;
        }
        if let Some(s) = r.get_str("diff_level") {
            cfg.routing.diff_level = DiffLevel::parse(s)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn train_config(&self) -> Result<TrainConfig> {
        let r = &self.run;
        let mut cfg = TrainConfig::new(self.model_config()?);
        if let Some(v) = r.get("batch_size")? {
            cfg.batch_size = v;
        }
        if let Some(v) = r.get("lr0")? {
            cfg.lr0 = v;
        }
        if let Some(v) = r.get("total_steps")? {
            cfg.total_steps = v;
        }
        if let Some(v) = r.get("seed")? {
            cfg.seed = v;
        }
        if let Some(v) = r.get("log_every")? {
            cfg.log_every = v;
        }
        if let Some(on) = r.get_bool("augment")? {
            cfg.augment = if on { AugmentFlags::ALL } else { AugmentFlags::NONE };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn path(&self, key: &str) -> Result<PathBuf> {
        self.run
            .get_str(key)
            .map(PathBuf::from)
            .ok_or_else(|| IqtError::Config(format!("`{}` is required", key.replace('_', "-"))))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| IqtError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| IqtError::io(path, e))
}

/// CSV `ref_path,dist_path,mos,score`; rows that could not be scored have an empty score.
fn write_predictions(path: &Path, rows: &[ManifestRow], predictions: &[Option<f64>]) -> Result<()> {
    let csv_err = |e: csv::Error| IqtError::Contract(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["ref_path", "dist_path", "mos", "score"]).map_err(csv_err)?;
    for (row, p) in rows.iter().zip(predictions) {
        w.write_record([
            row.ref_path.display().to_string(),
            row.dist_path.display().to_string(),
            row.mos.to_string(),
            p.map_or(String::new(), |v| v.to_string()),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| IqtError::io(path, e))
}

fn path_str(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train {
            common,
            manifest,
            steps,
            out_dir,
        } => {
            let s = Settings::resolve(
                &common,
                &[
                    ("manifest", path_str(&manifest)),
                    ("total_steps", steps.map(|v| v.to_string())),
                    ("out_dir", path_str(&out_dir)),
                ],
            )?;
            let cfg = s.train_config()?;
            let out_dir = s.path("out_dir")?;
            let rows = parse_manifest(s.path("manifest")?)?;
            let samples = load_samples(&cfg.model, &rows)?;
            create_dir(&out_dir)?;
            let outcome = train_samples(&samples, &cfg)?;
            let ckpt = out_dir.join("model.iqtc");
            save_checkpoint(&outcome.checkpoint, &ckpt)?;
            write_loss_log(out_dir.join("loss.csv"), &outcome.losses)?;
            println!("{}", ckpt.display());
        }
        Command::Score {
            ckpt,
            reference,
            distorted,
        } => {
            let ckpt = load_checkpoint(ckpt)?;
            let pair = load_pair(&ckpt.model.config, &reference, &distorted)?;
            println!("{}", score_pair_data(&pair, &ckpt.model)?);
        }
        Command::Eval {
            ckpt,
            manifest,
            out_dir,
        } => {
            let ckpt = load_checkpoint(ckpt)?;
            let rows = parse_manifest(&manifest)?;
            let evaluation = evaluate_rows(&ckpt.model.config, &rows, &ckpt.model)?;
            create_dir(&out_dir)?;
            let row = ReportRow {
                config_id: "eval".into(),
                outcome: Ok(evaluation.report),
            };
            write_report_csv(out_dir.join("report.csv"), std::slice::from_ref(&row))?;
            write_predictions(&out_dir.join("predictions.csv"), &rows, &evaluation.predictions)?;
            let table = report_table(&manifest.display().to_string(), &[], &[(row, Vec::new())]);
            write_text(&out_dir.join("report.txt"), &table)?;
            print!("{table}");
        }
        Command::Ablate {
            common,
            manifest,
            eval_manifest,
            steps,
            out_dir,
        } => {
            let s = Settings::resolve(
                &common,
                &[
                    ("manifest", path_str(&manifest)),
                    ("eval_manifest", path_str(&eval_manifest)),
                    ("total_steps", steps.map(|v| v.to_string())),
                    ("out_dir", path_str(&out_dir)),
                ],
            )?;
            let base = s.train_config()?;
            let out_dir = s.path("out_dir")?;
            let train_rows = parse_manifest(s.path("manifest")?)?;
            let train = load_samples(&base.model, &train_rows)?;
            let eval = match s.run.get_str("eval_manifest") {
                Some(p) => load_samples(&base.model, &parse_manifest(p)?)?,
                None => train.clone(),
            };
            create_dir(&out_dir)?;
            let results = run_ablation(&train, &eval, &base);
            let rows: Vec<ReportRow> = results.iter().map(|r| r.row()).collect();
            write_report_csv(out_dir.join("ablation.csv"), &rows)?;
            let table = ablation_table(&results);
            write_text(&out_dir.join("ablation.txt"), &table)?;
            print!("{table}");
        }
        Command::AttnExport {
            ckpt,
            reference,
            distorted,
            out_dir,
        } => {
            let ckpt = load_checkpoint(ckpt)?;
            let model = &ckpt.model;
            let p = model.config.patch_size;
            let pair = load_pair(&model.config, &reference, &distorted)?;
            let feats = match &pair {
                PairData::Images { reference, distorted } => {
                    let top = (reference.height() - p) / 2;
                    let left = (reference.width() - p) / 2;
                    let r = reference.crop(top, left, p, p)?;
                    let d = distorted.crop(top, left, p, p)?;
                    create_dir(&out_dir)?;
                    write_ppm(out_dir.join("ref_crop.ppm"), &r)?;
                    write_ppm(out_dir.join("dist_crop.ppm"), &d)?;
                    model.features(&r, &d)?
                }
                PairData::Features { reference, distorted } => {
                    crate::model::StreamFeatures::from_maps(reference.clone(), distorted.clone())?
                }
            };
            let trace = model.forward_traced(&feats)?;
            let (gh, gw) = model.config.grid()?;
            let heat = export_attention(&trace.attention, gh, gw, p, p)?;
            create_dir(&out_dir)?;
            let out = out_dir.join("attention.pgm");
            heat.write_pgm(&out)?;
            println!("{}", trace.score);
        }
        Command::ExtractFeatures {
            common,
            image,
            manifest,
            out_dir,
        } => {
            let s = Settings::resolve(&common, &[("manifest", path_str(&manifest))])?;
            let cfg = s.model_config()?;
            if cfg.backbone.kind != BackboneKind::ToyCnn {
                return Err(IqtError::Config(
                    "feature extraction needs the toy backbone; pass `--set backbone=toy` or `--preset tiny`".into(),
                ));
            }
            let backbone = Backbone::from_spec(cfg.backbone.clone())?;
            create_dir(&out_dir)?;
            let extract = |src: &Path, name: &str| -> Result<PathBuf> {
                let dst = out_dir.join(name);
                save_feature_file(&dst, &extract_features(&decode_image(src)?, &backbone)?)?;
                Ok(dst)
            };
            match (image, s.run.get_str("manifest")) {
                (Some(img), _) => {
                    let stem = img.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
                    println!("{}", extract(&img, &format!("{stem}.iqtf"))?.display());
                }
                (None, Some(m)) => {
                    let rows = parse_manifest(m)?;
                    let mut out_rows = Vec::with_capacity(rows.len());
                    for (i, row) in rows.iter().enumerate() {
                        let r = extract(&row.ref_path, &format!("{i:05}_ref.iqtf"))?;
                        let d = extract(&row.dist_path, &format!("{i:05}_dist.iqtf"))?;
                        out_rows.push(ManifestRow {
                            ref_path: r.file_name().expect("file name").into(),
                            dist_path: d.file_name().expect("file name").into(),
                            mos: row.mos,
                        });
                    }
                    let out = out_dir.join("manifest.csv");
                    write_manifest(&out, &out_rows)?;
                    println!("{}", out.display());
                }
                (None, None) => return Err(IqtError::Config("pass --image or --manifest".into())),
            }
        }
    }
    Ok(())
}

/// Parses `argv` (including the program name) and runs the command.
/// Returns the process exit code: 0 on success, 1 on failure, 2 on usage errors.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(args: &[&str]) -> Settings {
        let mut common = Common::default();
        let mut it = args.iter();
        while let Some(&a) = it.next() {
            match a {
                "--preset" => common.preset = it.next().map(|s| s.to_string()),
                "--set" => common.overrides.push(it.next().unwrap().to_string()),
                other => panic!("{other}"),
            }
        }
        Settings::resolve(&common, &[]).unwrap()
    }

    #[test]
    fn presets_select_published_hyper_parameters() {
        let c = settings(&["--preset", "iqt-c"]).model_config().unwrap();
        assert_eq!(
            (c.transformer.layers, c.transformer.d_model, c.transformer.n_heads, c.transformer.d_feat, c.transformer.d_head, c.patch_size),
            (1, 128, 4, 1024, 128, 192)
        );
        let c = settings(&["--preset", "iqt"]).model_config().unwrap();
        assert_eq!(
            (c.transformer.layers, c.transformer.d_model, c.transformer.n_heads, c.transformer.d_feat, c.transformer.d_head, c.patch_size),
            (2, 256, 4, 1024, 512, 256)
        );
    }

    #[test]
    fn overrides_reach_the_model() {
        let s = settings(&["--preset", "tiny", "--set", "routing=1", "--set", "d_model=16", "--set", "augment=off"]);
        let c = s.model_config().unwrap();
        assert_eq!((c.routing.encoder, c.routing.decoder), (Stream::Dist, Stream::Dist));
        assert_eq!(c.transformer.d_model, 16);
        assert_eq!(s.train_config().unwrap().augment, AugmentFlags::NONE);
        let c = settings(&["--set", "backbone=toy", "--set", "patch_size=32", "--set", "stage_channels=2"]).model_config().unwrap();
        assert_eq!(c.backbone.stem_channels, 8);
    }

    #[test]
    fn routing_spellings() {
        assert_eq!(parse_routing("7").unwrap(), Routing::DEFAULT);
        assert_eq!(parse_routing("diff,ref").unwrap(), Routing::DEFAULT);
        assert_eq!(parse_routing("image").unwrap().diff_level, DiffLevel::Image);
        assert!(parse_routing("9").is_err());
        assert!(parse_routing("diff,foo").is_err());
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(dispatch(["iqt", "frobnicate"]), 2);
        assert_eq!(dispatch(["iqt", "score", "--bogus"]), 2);
        assert_eq!(dispatch(["iqt"]), 2);
        assert_eq!(dispatch(["iqt", "--help"]), 0);
    }
}
