use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use log::info;
use scalefuse::datastats::{self, Histogram};
use scalefuse::extract::FeatureStore;
use scalefuse::fuse::max_pool;
use scalefuse::harness::{self, DatasetConfig, Experiment, ExperimentConfig, ResultTable};
use scalefuse::metrics::MiOptions;
use scalefuse::pyramid::{patch_grid, ScaleSpec, DEFAULT_SIDES};
use scalefuse::variants::{self, make_variant, VariantSpec};
use scalefuse::Raster;

use crate::failure::{Failure, CONFIG, MISSING_DATA};
use crate::{DualArgs, ExperimentArgs, ExtractSynthArgs, GeometryArgs, MetricsArgs, PoolArgs, ReportArgs, SpliceArgs, StatsArgs, VariantsArgs};

type Outcome = Result<(), Failure>;

pub fn configure_threads() -> Outcome {
    let Ok(raw) = std::env::var("MSF_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::config(format!("MSF_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::config(format!("thread pool: {e}")))
}

/// Writes to `out` when given, stdout otherwise.
fn emit(text: &str, out: Option<&Path>) -> Outcome {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)
                    .with_context(|| format!("creating {}", dir.display()))
                    .map_err(|e| Failure::new(MISSING_DATA, e))?;
            }
            fs::write(path, text)
                .with_context(|| format!("writing {}", path.display()))
                .map_err(|e| Failure::new(MISSING_DATA, e))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| Failure::new(MISSING_DATA, e))
        }
    }
}

/// Loads a config; relative dump and output paths are taken relative to the
/// config file's directory.
fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let rebase = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    if let DatasetConfig::Dumps { stores } = &mut cfg.dataset {
        stores.values_mut().for_each(rebase);
    }
    if let Some(dir) = cfg.output_dir.as_mut() {
        rebase(dir);
    }
    Ok(cfg)
}

fn experiment(path: &Path) -> Result<Experiment, Failure> {
    Ok(Experiment::new(load_config(path)?)?)
}

fn emit_table(table: &ResultTable, args: &ExperimentArgs) -> Outcome {
    emit(&table.render(args.format.into())?, args.out.as_deref())
}

fn spec(side: u32, g: &GeometryArgs) -> Result<ScaleSpec, Failure> {
    Ok(ScaleSpec::with_geometry(side, g.patch_side, g.stride)?)
}

pub fn scales(sides: &[u32], g: &GeometryArgs) -> Outcome {
    let sides = if sides.is_empty() { &DEFAULT_SIDES[..] } else { sides };
    let mut csv = String::from("side,per_axis,num_patches\n");
    for &side in sides {
        let s = spec(side, g)?;
        writeln!(csv, "{side},{},{}", s.per_axis(), s.num_patches()).unwrap();
    }
    emit(&csv, None)
}

pub fn grid(side: u32, g: &GeometryArgs) -> Outcome {
    let grid = patch_grid(&spec(side, g)?)?;
    let mut csv = String::from("index,x,y\n");
    for (i, (x, y)) in grid.positions.iter().enumerate() {
        writeln!(csv, "{i},{x},{y}").unwrap();
    }
    emit(&csv, None)
}

pub fn extract_synth(args: &ExtractSynthArgs) -> Outcome {
    let cfg = load_config(&args.config)?;
    let DatasetConfig::Synthetic(dataset) = &cfg.dataset else {
        return Err(Failure::config("extract-synth needs a synthetic dataset config"));
    };
    let specs = cfg.scale_specs()?;
    let stores = harness::write_synthetic_dumps(dataset, &specs, cfg.seed, &args.out_dir)?;
    // A dataset stanza that can replace the synthetic one in the config.
    let stanza = serde_json::to_string_pretty(&DatasetConfig::Dumps { stores }).expect("dataset serializes");
    emit(&(stanza + "\n"), None)
}

pub fn pool(args: &PoolArgs) -> Outcome {
    let store = FeatureStore::open(&args.dump)?;
    let labels = store.labels();
    let ids: Vec<String> = store
        .keys()
        .filter(|&(_, side)| side == args.side)
        .map(|(id, _)| id.to_string())
        .collect();
    if ids.is_empty() {
        return Err(Failure::new(
            MISSING_DATA,
            anyhow::anyhow!("{} has no records at scale {}", args.dump.display(), args.side),
        ));
    }
    let mut csv = String::new();
    for (n, id) in ids.iter().enumerate() {
        let pooled = max_pool(&store.load_features(id, args.side)?)?;
        if n == 0 {
            csv.push_str("image_id,label");
            (0..pooled.values.len()).for_each(|d| write!(csv, ",f{d}").unwrap());
            csv.push('\n');
        }
        let label = labels.get(id).map(|l| l.to_string()).unwrap_or_default();
        write!(csv, "{id},{label}").unwrap();
        pooled.values.iter().for_each(|v| write!(csv, ",{v}").unwrap());
        csv.push('\n');
    }
    emit(&csv, args.out.as_deref())
}

pub fn sweep(args: &ExperimentArgs) -> Outcome {
    let table = experiment(&args.config)?.run_single_scale_sweep()?;
    emit_table(&table, args)
}

pub fn dual(args: &DualArgs) -> Outcome {
    let exp = experiment(&args.common.config)?;
    let a = match &args.a {
        Some(a) => a.clone(),
        None => exp.config().scene()?,
    };
    let b = match &args.b {
        Some(b) => b.clone(),
        None => exp.config().object()?,
    };
    let table = exp.run_dual_grid(&a, &b)?;
    emit_table(&table, &args.common)
}

pub fn splice(args: &SpliceArgs) -> Outcome {
    let exp = experiment(&args.common.config)?;
    let table = match args.point {
        Some(k) => ResultTable {
            rows: vec![exp.run_spliced(k)?],
        },
        None => {
            let search = exp.splice_search()?;
            info!("best splice point: {}", search.best);
            eprintln!("best splice point: {}", search.best);
            search.table
        }
    };
    emit_table(&table, &args.common)
}

pub fn double_full(args: &ExperimentArgs) -> Outcome {
    let row = experiment(&args.config)?.run_double_full()?;
    emit_table(&ResultTable { rows: vec![row] }, args)
}

pub fn metrics(args: &MetricsArgs) -> Outcome {
    let exp = experiment(&args.config)?;
    let opts = MiOptions {
        num_bins: args.bins,
        pair_sample: args.pair_sample,
        seed: exp.config().seed,
        keep_per_dimension: false,
    };
    let rows = exp.run_metrics(&opts)?;
    emit(&harness::metrics_csv(&rows)?, args.out.as_deref())
}

fn write_histogram(h: &Histogram, path: &Path) -> Outcome {
    let mut buf = Vec::new();
    h.write_csv(&mut buf)?;
    emit(std::str::from_utf8(&buf).expect("csv is utf-8"), Some(path))
}

pub fn stats(args: &StatsArgs) -> Outcome {
    let records = datastats::parse_annotations(&args.annotations)?;
    let edges = Histogram::uniform(args.size_bins, 0.0, 1.0)?.edges;
    let sizes = datastats::object_size_histogram(&records, Some(edges))?;
    let counts = datastats::objects_per_image_histogram(&records, args.count_cap)?;
    write_histogram(&sizes, &args.out_dir.join("object_sizes.csv"))?;
    write_histogram(&counts, &args.out_dir.join("objects_per_image.csv"))?;
    info!("{} objects over {} images", sizes.total, counts.total);
    Ok(())
}

fn load_image(dir: &Path, image_id: &str) -> Result<Raster, Failure> {
    let path = ["png", "jpg", "jpeg"]
        .iter()
        .map(|ext| dir.join(format!("{image_id}.{ext}")))
        .find(|p| p.is_file())
        .ok_or_else(|| Failure::new(MISSING_DATA, anyhow::anyhow!("no image file for {image_id} in {}", dir.display())))?;
    let rgb = image::open(&path)
        .with_context(|| format!("decoding {}", path.display()))
        .map_err(|e| Failure::new(MISSING_DATA, e))?
        .into_rgb8();
    let (w, h) = rgb.dimensions();
    Ok(Raster::from_rgb(w as usize, h as usize, rgb.into_raw()).expect("decoded buffer matches its size"))
}

fn save_png(raster: &Raster, path: &Path) -> Outcome {
    image::save_buffer(
        path,
        raster.as_rgb(),
        raster.width() as u32,
        raster.height() as u32,
        image::ExtendedColorType::Rgb8,
    )
    .with_context(|| format!("writing {}", path.display()))
    .map_err(|e| Failure::new(MISSING_DATA, e))
}

pub fn variants(args: &VariantsArgs) -> Outcome {
    let records = datastats::parse_annotations(&args.annotations)?;
    let probes = variants::select_probe_objects(&records, args.top_k, args.min_size);
    let mut specs = vec![VariantSpec::original(false), VariantSpec::original(true)];
    for &pct in &args.pcts {
        for masked in [false, true] {
            let s = VariantSpec::canonical(masked, pct);
            s.validate().map_err(|e| Failure::new(CONFIG, e))?;
            specs.push(s);
        }
    }
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))
        .map_err(|e| Failure::new(MISSING_DATA, e))?;

    let mut manifest = String::from("path,label,kind,pct\n");
    let mut skipped = 0usize;
    let mut current: Option<(usize, Raster)> = None;
    for probe in &probes {
        let record = &records[probe.record];
        if current.as_ref().map(|(r, _)| *r) != Some(probe.record) {
            current = Some((probe.record, load_image(&args.images, &record.image_id)?));
        }
        let image = &current.as_ref().expect("loaded above").1;
        let polygon = &record.objects[probe.object].polygon;
        for spec in &specs {
            let variant = match make_variant(image, polygon, spec) {
                Ok(v) => v,
                Err(e) => {
                    log::warn!("{} object {}: {e}", record.image_id, probe.object);
                    skipped += 1;
                    continue;
                }
            };
            let name = variants::variant_file_name(&record.image_id, probe.object, spec);
            save_png(&variant.image, &args.out_dir.join(&name))?;
            let pct = spec.scale_pct.map(|p| p.to_string()).unwrap_or_default();
            writeln!(manifest, "{name},{},{},{pct}", probe.label, spec.kind).unwrap();
        }
    }
    if skipped > 0 {
        eprintln!("skipped {skipped} crops that could not be produced");
    }
    emit(&manifest, Some(&args.out_dir.join("manifest.csv")))
}

pub fn report(args: &ReportArgs) -> Outcome {
    let file = fs::File::open(&args.input)
        .with_context(|| format!("opening {}", args.input.display()))
        .map_err(|e| Failure::new(MISSING_DATA, e))?;
    let mut table = ResultTable::from_csv(file)?;
    if args.best {
        let best = table
            .best_by_class_avg()
            .ok_or_else(|| Failure::config(format!("{} has no rows", args.input.display())))?;
        table.rows = vec![table.rows.swap_remove(best)];
    }
    emit(&table.render(args.format.into())?, args.out.as_deref())
}
