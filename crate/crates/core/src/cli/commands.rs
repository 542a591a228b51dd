use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    usage, ClassifyArgs, Cli, CliError, Command, CropPlanArgs, EvaluateArgs, IngestArgs, MetricArg, ModeArg,
    PrecisionArg, PromptArgs, SearchArgs, SplitArgs, VariantArg,
};
use crate::classify::{
    retrieval_provider, route_and_classify, write_predictions_jsonl, Arrangement, EmptyStrategy, MatchMode, Matcher,
    MatchingConfig, Prediction, PredictionTable, RouterConfig, ScoreProvider,
};
use crate::error::Error;
use crate::eval::grouped_report;
use crate::geometry::{select_primary_detection, square_crop_rect_with, Overflow};
use crate::index::{FlatIndex, Metric};
use crate::ingest::{parse_coco_cameratraps, parse_megadetector_json, AnnotationSet, DetectionFile};
use crate::model::{EmbeddingMatrix, EmbeddingRecord, ImageRecord, Variant};
use crate::scalar::Scalar;
use crate::split::{make_split, parse_fraction, SplitAssignment, SplitConfig, SplitRole, SplitScheme};
use crate::store::{read_embedding_store, write_embedding_store, StoreOptions};
use crate::text::{
    build_adjudication_prompt, canonical_category, caption_prompt_catalog, parse_answer, prompt_hash, Answer,
    ReplayClient, TextClient,
};

type CliResult<T = ()> = std::result::Result<T, CliError>;

pub(super) fn dispatch(cli: &Cli) -> CliResult {
    let verbose = cli.verbose > 0;
    match &cli.command {
        Command::Ingest(a) => ingest(a, verbose),
        Command::CropPlan(a) => crop_plan(a, verbose),
        Command::Search(a) => match a.precision {
            PrecisionArg::F32 => search::<f32>(a, verbose),
            PrecisionArg::F64 => search::<f64>(a, verbose),
        },
        Command::Classify(a) => match a.precision {
            PrecisionArg::F32 => classify::<f32>(a, verbose),
            PrecisionArg::F64 => classify::<f64>(a, verbose),
        },
        Command::Evaluate(a) => evaluate(a, verbose),
        Command::Split(a) => split(a, verbose),
        Command::Prompt(a) => prompt(a),
    }
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::L2 => Metric::L2,
            MetricArg::Cosine => Metric::Cosine,
        }
    }
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::Full,
            VariantArg::Cropped => Variant::Cropped,
            VariantArg::Segmented => Variant::Segmented,
        }
    }
}

fn check_inputs(inputs: &[(&str, Option<&PathBuf>)]) -> CliResult {
    for (flag, path) in inputs {
        if let Some(p) = path {
            if !p.exists() {
                return Err(usage(format!("{flag}: {} does not exist", p.display())));
            }
        }
    }
    Ok(())
}

fn check_threads(threads: Option<usize>) -> CliResult {
    if threads == Some(0) {
        return Err(usage("--threads must be at least 1"));
    }
    Ok(())
}

fn check_threshold(t: f64) -> CliResult {
    if !(0.0..=1.0).contains(&t) {
        return Err(usage(format!("--conf-threshold {t} outside [0, 1]")));
    }
    Ok(())
}

fn read_bytes(path: &Path) -> crate::Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn open_lines(path: &Path) -> crate::Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn source(path: &Path) -> String {
    path.display().to_string()
}

fn load_annotations(path: &Path) -> crate::Result<AnnotationSet> {
    parse_coco_cameratraps(&read_bytes(path)?, &source(path))
}

fn load_detections(path: &Path) -> crate::Result<DetectionFile> {
    parse_megadetector_json(&read_bytes(path)?, &source(path))
}

fn load_predictions(path: &Path) -> crate::Result<PredictionTable> {
    PredictionTable::from_jsonl(open_lines(path)?, &source(path))
}

/// Parses every non-blank line of a JSON-lines file.
fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> crate::Result<Vec<T>> {
    let name = source(path);
    let mut out = Vec::new();
    for (i, line) in open_lines(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(name.clone(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(&name, Some(i), e.to_string()))?);
    }
    Ok(out)
}

/// Buffered output to a file, or stdout when no path is given.
fn output(path: Option<&PathBuf>) -> crate::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Error::io(p.display().to_string(), e))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_err(path: Option<&PathBuf>, e: io::Error) -> Error {
    let name = path.map_or_else(|| "<stdout>".to_string(), |p| p.display().to_string());
    Error::io(name, e)
}

fn write_json_line<T: Serialize>(out: &mut dyn Write, value: &T) -> io::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")
}

fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> crate::Result<R> {
    match threads {
        None => Ok(f()),
        Some(n) => Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(f)),
    }
}

/// Annotation lookup by image id and by file name.
struct ImageIndex<'a> {
    by_key: HashMap<&'a str, &'a ImageRecord>,
    excluded: HashSet<&'a str>,
}

impl<'a> ImageIndex<'a> {
    fn new(ann: &'a AnnotationSet) -> Self {
        let mut by_key = HashMap::new();
        for img in &ann.images {
            by_key.insert(img.file_name.as_str(), img);
        }
        // ids take precedence over file names
        for img in &ann.images {
            by_key.insert(img.image_id.as_str(), img);
        }
        Self {
            by_key,
            excluded: ann
                .excluded_multi_species
                .iter()
                .flat_map(|img| [img.image_id.as_str(), img.file_name.as_str()])
                .collect(),
        }
    }

    fn get(&self, key: &str) -> Option<&'a ImageRecord> {
        self.by_key.get(key).copied()
    }
}

#[derive(Debug, Deserialize)]
struct EmbeddingLine {
    image_id: String,
    vector: Vec<f32>,
    #[serde(default)]
    label: Option<u32>,
    #[serde(default)]
    location: Option<String>,
}

fn ingest(a: &IngestArgs, verbose: bool) -> CliResult {
    check_inputs(&[
        ("--embeddings", Some(&a.embeddings)),
        ("--annotations", a.annotations.as_ref()),
        ("--split", a.split.as_ref()),
    ])?;
    if a.dimension == Some(0) {
        return Err(usage("--dimension must be positive"));
    }
    let role = a
        .role
        .as_deref()
        .map(str::parse::<SplitRole>)
        .transpose()
        .map_err(|e| usage(e.to_string()))?;

    let ann = a.annotations.as_deref().map(load_annotations).transpose()?;
    let index = ann.as_ref().map(ImageIndex::new);
    let empty_label = a
        .empty_label
        .or_else(|| ann.as_ref().and_then(|s| s.label_space.empty_id()));
    let split = match &a.split {
        Some(p) => Some(SplitAssignment::read_csv(
            File::open(p).map_err(|e| Error::io(source(p), e))?,
            &source(p),
        )?),
        None => None,
    };

    let variant = Variant::from(a.variant);
    let mut records = Vec::new();
    let mut skipped = 0usize;
    for line in read_jsonl::<EmbeddingLine>(&a.embeddings)? {
        let mut rec = EmbeddingRecord {
            image_id: line.image_id,
            variant,
            label: line.label,
            location_id: line.location.unwrap_or_default(),
            vector: line.vector,
        };
        if let Some(index) = &index {
            if index.excluded.contains(rec.image_id.as_str()) {
                skipped += 1;
                continue;
            }
            if let Some(img) = index.get(&rec.image_id) {
                rec.image_id = img.image_id.clone();
                rec.location_id = img.location_id.clone();
                if rec.label.is_none() {
                    rec.label = img.gt_label;
                }
            }
        }
        if let (Some(split), Some(role)) = (&split, role) {
            if split.role(&rec.image_id) != Some(role) {
                skipped += 1;
                continue;
            }
        }
        if a.drop_empty && rec.label.is_some() && rec.label == empty_label {
            skipped += 1;
            continue;
        }
        records.push(rec);
    }

    let mut options = StoreOptions::new(variant);
    if let Some(d) = a.dimension {
        options = options.dimension(d);
    }
    if a.database {
        if let Some(id) = empty_label {
            options = options.reserve_label(id);
        }
    }
    let handle = write_embedding_store(&a.out, &records, &options)?;
    if verbose {
        eprintln!(
            "ingest: wrote {} rows of dimension {} to {} ({} skipped)",
            handle.manifest.count,
            handle.manifest.dimension,
            a.out.display(),
            skipped
        );
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct DimensionRow {
    image_id: String,
    width: u32,
    height: u32,
}

#[derive(Debug, Serialize)]
struct CropLine<'a> {
    image_id: &'a str,
    file: &'a str,
    category: &'a str,
    confidence: f64,
    rect: [u32; 4],
    pad: [u32; 4],
    side: u32,
}

fn crop_plan(a: &CropPlanArgs, verbose: bool) -> CliResult {
    check_inputs(&[
        ("--detections", Some(&a.detections)),
        ("--dimensions", a.dimensions.as_ref()),
        ("--annotations", a.annotations.as_ref()),
    ])?;
    check_threshold(a.conf_threshold)?;
    let overflow = if a.overflow == "shrink" {
        Overflow::Shrink
    } else {
        Overflow::Pad
    };

    let dets = load_detections(&a.detections)?;
    // detection file entry -> (image id, width, height)
    let mut sizes: HashMap<String, (String, u32, u32)> = HashMap::new();
    if let Some(p) = &a.dimensions {
        let name = source(p);
        let mut reader = csv::Reader::from_path(p).map_err(|e| Error::parse(&name, None, e.to_string()))?;
        for (i, row) in reader.deserialize::<DimensionRow>().enumerate() {
            let row = row.map_err(|e| Error::parse(&name, Some(i), e.to_string()))?;
            sizes.insert(row.image_id.clone(), (row.image_id, row.width, row.height));
        }
    }
    if let Some(p) = &a.annotations {
        let ann = load_annotations(p)?;
        for img in ann.images.iter().chain(&ann.excluded_multi_species) {
            let entry = (img.image_id.clone(), img.width, img.height);
            sizes.insert(img.image_id.clone(), entry.clone());
            sizes.insert(img.file_name.clone(), entry);
        }
    }

    let mut out = output(a.out.as_ref())?;
    let mut planned = 0usize;
    for img in &dets.images {
        let Some(primary) = select_primary_detection(&img.detections, a.conf_threshold, a.animals_only) else {
            continue;
        };
        let (image_id, w, h) = sizes
            .get(&img.file)
            .ok_or_else(|| Error::invalid(format!("no image dimensions for {:?}", img.file)))?;
        let plan = square_crop_rect_with(&primary.bbox, *w, *h, overflow)?;
        let line = CropLine {
            image_id,
            file: &img.file,
            category: primary.category.name(),
            confidence: primary.confidence,
            rect: [plan.rect.x, plan.rect.y, plan.rect.w, plan.rect.h],
            pad: [plan.pad.left, plan.pad.top, plan.pad.right, plan.pad.bottom],
            side: plan.side,
        };
        write_json_line(&mut *out, &line).map_err(|e| write_err(a.out.as_ref(), e))?;
        planned += 1;
    }
    out.flush().map_err(|e| write_err(a.out.as_ref(), e))?;
    if verbose {
        eprintln!(
            "crop-plan: {planned} of {} images have a detection at or above {}",
            dets.images.len(),
            a.conf_threshold
        );
    }
    Ok(())
}

fn load_store<T: Scalar>(path: &Path) -> crate::Result<EmbeddingMatrix<T>> {
    Ok(read_embedding_store(path)?.cast::<T>())
}

#[derive(Debug, Serialize)]
struct NeighborLine<'a, T> {
    id: &'a str,
    label: Option<u32>,
    score: T,
}

#[derive(Debug, Serialize)]
struct SearchLine<'a, T> {
    query_id: &'a str,
    neighbors: Vec<NeighborLine<'a, T>>,
}

fn search<T: Scalar>(a: &SearchArgs, verbose: bool) -> CliResult {
    check_inputs(&[("--db", Some(&a.db)), ("--queries", Some(&a.queries))])?;
    if a.k == 0 {
        return Err(usage("-k must be at least 1"));
    }
    check_threads(a.threads)?;

    let index = FlatIndex::build(load_store::<T>(&a.db)?, a.metric.into())?;
    let queries = load_store::<T>(&a.queries)?;
    let results = index.search_batch(&queries, a.k, a.threads)?;

    let mut out = output(a.out.as_ref())?;
    for (query_id, neighbors) in queries.ids().iter().zip(&results) {
        let line = SearchLine {
            query_id,
            neighbors: neighbors
                .iter()
                .map(|n| NeighborLine {
                    id: &n.id,
                    label: n.label,
                    score: n.score,
                })
                .collect(),
        };
        write_json_line(&mut *out, &line).map_err(|e| write_err(a.out.as_ref(), e))?;
    }
    out.flush().map_err(|e| write_err(a.out.as_ref(), e))?;
    if verbose {
        eprintln!("search: {} queries against {} rows", queries.len(), index.len());
    }
    Ok(())
}

/// Option checks that need no file contents.
fn validate_classify(a: &ClassifyArgs) -> CliResult<(EmptyStrategy, Arrangement)> {
    check_inputs(&[
        ("--db", a.db.as_ref()),
        ("--queries", a.queries.as_ref()),
        ("--crop-preds", a.crop_preds.as_ref()),
        ("--detections", Some(&a.detections)),
        ("--annotations", a.annotations.as_ref()),
        ("--full-preds", a.full_preds.as_ref()),
        ("--full-queries", a.full_queries.as_ref()),
        ("--full-db", a.full_db.as_ref()),
    ])?;
    if a.k == 0 {
        return Err(usage("-k must be at least 1"));
    }
    if a.ranking_len == 0 {
        return Err(usage("--ranking-len must be at least 1"));
    }
    check_threshold(a.conf_threshold)?;
    check_threads(a.threads)?;
    if a.crop_variant == VariantArg::Full {
        return Err(usage("--crop-variant must be cropped or segmented"));
    }

    let strategy = match a.strategy.as_str() {
        "empty" => EmptyStrategy::DeclareEmpty,
        _ => EmptyStrategy::SecondClassifier,
    };
    let arrangement = match a.arrangement.as_str() {
        "one" => Arrangement::SingleShared,
        _ => Arrangement::TwoSeparate,
    };

    match (&a.crop_preds, &a.db, &a.queries) {
        (Some(_), _, _) => {}
        (None, Some(_), Some(_)) => {}
        (None, None, Some(_)) => return Err(usage("--queries needs --db")),
        (None, _, None) => {
            return Err(usage(
                "a crop classifier is required: --crop-preds, or --db with --queries",
            ))
        }
    }
    let has_full = a.full_preds.is_some() || a.full_queries.is_some();
    match strategy {
        EmptyStrategy::DeclareEmpty => {
            if has_full {
                return Err(usage(
                    "--full-preds/--full-queries are unused with --strategy empty; drop them or use --strategy second",
                ));
            }
            if a.empty_label.is_none() && a.annotations.is_none() {
                return Err(usage(
                    "--strategy empty needs --empty-label or --annotations with an \"empty\" class",
                ));
            }
        }
        EmptyStrategy::SecondClassifier => {
            let shared_table = arrangement == Arrangement::SingleShared && a.crop_preds.is_some();
            if !has_full && !shared_table {
                return Err(usage(
                    "--strategy second needs a full-image provider: --full-preds or --full-queries",
                ));
            }
        }
    }
    if a.full_queries.is_some() {
        match arrangement {
            Arrangement::TwoSeparate if a.full_db.is_none() => {
                return Err(usage("--full-queries with --arrangement two needs --full-db"))
            }
            Arrangement::SingleShared if a.full_db.is_some() => {
                return Err(usage(
                    "--full-db conflicts with --arrangement one (the shared classifier uses --db)",
                ))
            }
            Arrangement::SingleShared if a.db.is_none() => {
                return Err(usage("--full-queries with --arrangement one needs --db"))
            }
            _ => {}
        }
    }
    Ok((strategy, arrangement))
}

fn classify<T: Scalar>(a: &ClassifyArgs, verbose: bool) -> CliResult {
    let (empty_strategy, arrangement) = validate_classify(a)?;

    let ann = a.annotations.as_deref().map(load_annotations).transpose()?;
    let empty_label = a
        .empty_label
        .or_else(|| ann.as_ref().and_then(|s| s.label_space.empty_id()));
    let router = RouterConfig {
        empty_strategy,
        arrangement,
        conf_threshold: a.conf_threshold,
        crop_variant: a.crop_variant.into(),
        empty_label,
    };
    if empty_strategy == EmptyStrategy::DeclareEmpty && empty_label.is_none() {
        return Err(usage("--annotations has no \"empty\" class; pass --empty-label"));
    }
    let matching = MatchingConfig {
        metric: a.metric.into(),
        mode: match a.mode {
            ModeArg::Knn => MatchMode::Knn,
            ModeArg::Centroid => MatchMode::Centroid,
        },
        k: a.k,
        ranking_len: a.ranking_len,
    };
    let dets = load_detections(&a.detections)?;

    let shared = match &a.db {
        Some(db) => Some(Matcher::build(load_store::<T>(db)?, &matching)?),
        None => None,
    };
    let crop_table = match (&a.crop_preds, &a.queries, &shared) {
        (Some(p), _, _) => load_predictions(p)?,
        (None, Some(q), Some(m)) => {
            let queries = load_store::<T>(q)?;
            with_threads(a.threads, || {
                retrieval_provider(m, &queries, router.crop_variant, a.ranking_len)
            })??
        }
        _ => unreachable!("validated above"),
    };
    let full_table = match (&a.full_preds, &a.full_queries) {
        (Some(p), _) => Some(load_predictions(p)?),
        (None, Some(q)) => {
            let queries = load_store::<T>(q)?;
            let separate;
            let matcher = match (&a.full_db, &shared) {
                (Some(db), _) => {
                    separate = Matcher::build(load_store::<T>(db)?, &matching)?;
                    &separate
                }
                (None, Some(m)) => m,
                (None, None) => unreachable!("validated above"),
            };
            Some(with_threads(a.threads, || {
                retrieval_provider(matcher, &queries, Variant::Full, a.ranking_len)
            })??)
        }
        (None, None) => None,
    };
    router
        .validate(full_table.is_some())
        .map_err(|e| usage(e.to_string()))?;

    let index = ann.as_ref().map(ImageIndex::new);
    let full_provider = full_table.as_ref().map(|t| t as &dyn ScoreProvider);
    let mut predictions = Vec::with_capacity(dets.images.len());
    let mut skipped = 0usize;
    for det in &dets.images {
        if index.as_ref().is_some_and(|ix| ix.excluded.contains(det.file.as_str())) {
            skipped += 1;
            continue;
        }
        let image = match index.as_ref().and_then(|ix| ix.get(&det.file)) {
            Some(img) => img.clone(),
            None => ImageRecord::new(det.file.clone(), ""),
        };
        let primary = select_primary_detection(&det.detections, a.conf_threshold, a.animals_only);
        predictions.push(route_and_classify(
            &image,
            primary,
            &crop_table,
            full_provider,
            &router,
        )?);
    }

    let mut out = output(a.out.as_ref())?;
    write_predictions_jsonl(&mut out, &predictions).map_err(|e| write_err(a.out.as_ref(), e))?;
    out.flush().map_err(|e| write_err(a.out.as_ref(), e))?;
    if verbose {
        let mut by_route: BTreeMap<String, usize> = BTreeMap::new();
        for p in &predictions {
            let key = p.provenance.map_or_else(|| "unknown".to_string(), |v| v.to_string());
            *by_route.entry(key).or_default() += 1;
        }
        eprintln!(
            "classify: {} images {:?}, {skipped} multi-species images skipped",
            predictions.len(),
            by_route
        );
    }
    Ok(())
}

fn evaluate(a: &EvaluateArgs, verbose: bool) -> CliResult {
    check_inputs(&[("--preds", Some(&a.preds)), ("--truth", Some(&a.truth))])?;
    let preds: Vec<Prediction> = read_jsonl(&a.preds)?;
    let truth = load_annotations(&a.truth)?;
    let index = ImageIndex::new(&truth);

    let mut seen = HashSet::new();
    let mut rankings = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    let mut unmatched = 0usize;
    let mut excluded = 0usize;
    for p in &preds {
        if !seen.insert(p.image_id.as_str()) {
            return Err(Error::DuplicateKey(format!("prediction for image {:?}", p.image_id)).into());
        }
        if p.ranking.is_empty() {
            return Err(Error::parse(&source(&a.preds), None, format!("empty ranking for {:?}", p.image_id)).into());
        }
        if index.excluded.contains(p.image_id.as_str()) {
            excluded += 1;
            continue;
        }
        let Some(gt) = index.get(&p.image_id).and_then(|img| img.gt_label.map(|l| (img, l))) else {
            unmatched += 1;
            continue;
        };
        let (img, label) = gt;
        rankings.push(p.labels());
        labels.push(label);
        groups.push(match a.group_by.as_str() {
            "location" => img.location_id.clone(),
            _ => img.split_tag.map_or_else(|| "untagged".to_string(), |t| t.to_string()),
        });
    }
    if rankings.is_empty() {
        return Err(Error::invalid("no prediction matches a ground-truth image").into());
    }
    if unmatched > 0 {
        eprintln!("note: {unmatched} predictions have no ground truth and were skipped");
    }
    if verbose && excluded > 0 {
        eprintln!("evaluate: {excluded} multi-species images excluded");
    }

    let mut report = grouped_report(&rankings, &labels, &groups)?;
    report.label_names = truth
        .label_space
        .labels()
        .iter()
        .map(|l| (l.id, l.name.clone()))
        .collect();
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::invalid(e.to_string()))?;
    match &a.out {
        Some(path) => {
            std::fs::write(path, format!("{json}\n")).map_err(|e| Error::io(source(path), e))?;
            print!("{report}");
        }
        None => {
            println!("{json}");
            eprint!("{report}");
        }
    }
    Ok(())
}

fn split(a: &SplitArgs, verbose: bool) -> CliResult {
    check_inputs(&[("--annotations", Some(&a.annotations))])?;
    let scheme = match a.scheme.as_str() {
        "wct" => SplitScheme::WctLocation,
        "safari" => SplitScheme::SafariFirstX,
        _ => SplitScheme::ProvidedCisTrans,
    };
    let x = match (scheme, a.x) {
        (SplitScheme::SafariFirstX, Some(x)) => x,
        (SplitScheme::SafariFirstX, None) => return Err(usage("--scheme safari needs --x")),
        (_, Some(_)) => return Err(usage("--x applies only to --scheme safari")),
        (_, None) => 0,
    };
    let cfg = SplitConfig {
        scheme,
        test_location_fraction: parse_fraction(&a.test_fraction).map_err(|e| usage(e.to_string()))?,
        dev_train_fraction: parse_fraction(&a.train_fraction).map_err(|e| usage(e.to_string()))?,
        x,
        seed: a.seed,
        stratified: a.stratified,
    };
    let ann = load_annotations(&a.annotations)?;
    let assignment = make_split(&ann.images, &cfg)?;

    let mut out = output(a.out.as_ref())?;
    assignment.write_csv(&mut out)?;
    out.flush().map_err(|e| write_err(a.out.as_ref(), e))?;
    if verbose {
        eprintln!(
            "split: train {} / val {} / test {}",
            assignment.count(SplitRole::Train),
            assignment.count(SplitRole::Val),
            assignment.count(SplitRole::Test)
        );
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct CaptionLine {
    image_id: String,
    caption: String,
}

#[derive(Debug, Serialize)]
struct PromptLine<'a> {
    image_id: &'a str,
    prompt_hash: String,
    prompt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    response: Option<String>,
    /// Parsed category, or null when the answer names none or several.
    #[serde(skip_serializing_if = "Option::is_none")]
    answer: Option<Option<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<u32>,
}

fn prompt(a: &PromptArgs) -> CliResult {
    if a.catalog {
        let mut out = output(a.out.as_ref())?;
        for p in caption_prompt_catalog() {
            write_json_line(&mut *out, &p).map_err(|e| write_err(a.out.as_ref(), e))?;
        }
        out.flush().map_err(|e| write_err(a.out.as_ref(), e))?;
        return Ok(());
    }
    check_inputs(&[
        ("--annotations", a.annotations.as_ref()),
        ("--captions", a.captions.as_ref()),
        ("--replay", a.replay.as_ref()),
    ])?;
    if a.annotations.is_none() && a.categories.is_empty() {
        return Err(usage("category names are required: --annotations or --categories"));
    }
    let Some(captions_path) = &a.captions else {
        return Err(usage("--captions is required"));
    };

    let ann = a.annotations.as_deref().map(load_annotations).transpose()?;
    let categories: Vec<String> = match &ann {
        Some(set) => set.label_space.category_names().into_iter().map(String::from).collect(),
        None => a.categories.iter().map(|c| c.trim().to_string()).collect(),
    };
    let label_ids: HashMap<String, u32> = ann
        .as_ref()
        .map(|set| {
            set.label_space
                .labels()
                .iter()
                .map(|l| (canonical_category(&l.name), l.id))
                .collect()
        })
        .unwrap_or_default();
    let client = match &a.replay {
        Some(p) => Some(ReplayClient::from_jsonl(open_lines(p)?, &source(p))?),
        None => None,
    };

    let mut out = output(a.out.as_ref())?;
    for c in read_jsonl::<CaptionLine>(captions_path)? {
        let text = build_adjudication_prompt(&categories, &c.caption).map_err(|e| usage(e.to_string()))?;
        let mut line = PromptLine {
            image_id: &c.image_id,
            prompt_hash: prompt_hash(&text),
            prompt: text,
            response: None,
            answer: None,
            label: None,
        };
        if let Some(client) = &client {
            let response = client.complete(&line.prompt)?;
            let answer = match parse_answer(&response, &categories) {
                Answer::Category(name) => Some(name),
                Answer::Empty => None,
            };
            line.label = answer.as_ref().and_then(|n| label_ids.get(n).copied());
            line.answer = Some(answer);
            line.response = Some(response);
        }
        write_json_line(&mut *out, &line).map_err(|e| write_err(a.out.as_ref(), e))?;
    }
    out.flush().map_err(|e| write_err(a.out.as_ref(), e))?;
    Ok(())
}
