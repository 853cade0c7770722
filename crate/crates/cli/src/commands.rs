use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use streetpattern_core::cluster::{fit, select_k};
use streetpattern_core::datastore::{
    generate_synthetic_region, ingest_roads, load_dataset, parse_roads, save_dataset, to_json_bytes, write_atomic,
    FetchPlan, ProviderFixture, ProviderKind, StoredModel, SynthSpec, MODEL_FILE,
};
use streetpattern_core::geo::DEFAULT_CHUNK_LEN_M;
use streetpattern_core::routeviz::DEFAULT_SEGMENT_LEN_M;
use streetpattern_core::service::{AnnotatedRouteSet, RegionRegistry, RegionService, RouteQuery};
use streetpattern_core::vapattern::build_patterns;
use streetpattern_core::{ClusteringConfig, FeatureKind, GeoPoint, KStrategy, Method, Metric};

use crate::http;

#[derive(Debug, Parser)]
#[command(name = "streetpattern", version, about = "Street-view appearance patterns along driving routes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Chunk a GeoJSON road network into a new region of side-view samples.
    Ingest(IngestArgs),
    /// Write the street-view image requests for a region.
    ExtractPlan(ExtractPlanArgs),
    /// Cluster a region's features and build its pattern catalog.
    Cluster(ClusterArgs),
    /// Annotate the candidate routes between two points.
    Analyze(AnalyzeArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Generate a synthetic region with planted clusters.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProviderChoice {
    Fixture,
    Live,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub region: PathBuf,
    /// GeoJSON FeatureCollection of LineString roads.
    #[arg(long)]
    pub roads: PathBuf,
    #[arg(long, value_enum, default_value = "fixture")]
    pub provider: ProviderChoice,
    /// Recorded provider responses to store with the region.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    /// Region name; defaults to the directory name.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, default_value_t = DEFAULT_CHUNK_LEN_M)]
    pub chunk_len: f64,
}

#[derive(Debug, Args)]
pub struct ExtractPlanArgs {
    #[arg(long)]
    pub region: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FeatureChoice {
    Latent,
    Cat6,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodChoice {
    Kmeans,
    Agglo,
    Meanshift,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyChoice {
    Predrop,
    Maxscore,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MetricChoice {
    Euclidean,
    Cosine,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub region: PathBuf,
    #[arg(long, value_enum, default_value = "latent")]
    pub features: FeatureChoice,
    #[arg(long, value_enum, default_value = "kmeans")]
    pub method: MethodChoice,
    #[arg(long, default_value_t = 2)]
    pub k_min: usize,
    #[arg(long, default_value_t = 8)]
    pub k_max: usize,
    #[arg(long, value_enum, default_value = "predrop")]
    pub strategy: StrategyChoice,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "euclidean")]
    pub metric: MetricChoice,
    /// Fit exactly this many clusters instead of selecting k.
    #[arg(long)]
    pub k: Option<usize>,
    /// Mean-shift bandwidth; estimated from the data when omitted.
    #[arg(long)]
    pub bandwidth: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub region: PathBuf,
    /// Start point as `lat,lon`.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    pub origin: GeoPoint,
    /// End point as `lat,lon`.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    pub dest: GeoPoint,
    #[arg(long, default_value_t = DEFAULT_SEGMENT_LEN_M)]
    pub seg_len: f64,
    /// GeoJSON output with one feature per route segment.
    #[arg(long, default_value = "routes.geojson")]
    pub out: PathBuf,
    /// Also write the full annotated route set as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Region directory; repeat to serve several.
    #[arg(long, required = true)]
    pub region: Vec<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    pub clusters: usize,
    #[arg(long, default_value_t = 500)]
    pub per: usize,
    #[arg(long, default_value_t = 16)]
    pub dims: usize,
    #[arg(long, default_value_t = 10.0)]
    pub sep: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn parse_point(s: &str) -> Result<GeoPoint, String> {
    let (lat, lon) = s.split_once(',').ok_or_else(|| format!("expected lat,lon, got {s:?}"))?;
    let lat: f64 = lat.trim().parse().map_err(|_| format!("bad latitude in {s:?}"))?;
    let lon: f64 = lon.trim().parse().map_err(|_| format!("bad longitude in {s:?}"))?;
    GeoPoint::new(lat, lon).map_err(|e| e.to_string())
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(&a, out),
        Command::ExtractPlan(a) => extract_plan(&a, out),
        Command::Cluster(a) => cluster(&a, out),
        Command::Analyze(a) => analyze(&a, out),
        Command::Serve(a) => serve(&a),
        Command::Synth(a) => synth(&a, out),
    }
}

fn dir_name(dir: &Path) -> String {
    dir.file_name().and_then(|n| n.to_str()).unwrap_or("region").to_string()
}

pub fn ingest(a: &IngestArgs, out: &mut dyn Write) -> Result<()> {
    let text = fs::read_to_string(&a.roads).with_context(|| format!("reading {}", a.roads.display()))?;
    let roads = parse_roads(&text)?;
    let name = a.name.clone().unwrap_or_else(|| dir_name(&a.region));
    let mut ds = ingest_roads(&name, &roads, a.chunk_len)?;
    ds.manifest.provider = match a.provider {
        ProviderChoice::Fixture => ProviderKind::Fixture,
        ProviderChoice::Live => ProviderKind::Live,
    };
    if let Some(path) = &a.fixture {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let fixture: ProviderFixture =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        ds.provider_fixture = Some(fixture);
    }
    save_dataset(&ds, &a.region)?;
    writeln!(out, "ingested {} roads into {} samples in {}", roads.len(), ds.len(), a.region.display())?;
    Ok(())
}

pub fn extract_plan(a: &ExtractPlanArgs, out: &mut dyn Write) -> Result<()> {
    let ds = load_dataset(&a.region)?;
    let plan = FetchPlan::from_records(&ds.samples);
    write_atomic(&a.out, &to_json_bytes(&plan))?;
    writeln!(out, "wrote {} image requests to {}", plan.len(), a.out.display())?;
    Ok(())
}

pub fn cluster(a: &ClusterArgs, out: &mut dyn Write) -> Result<()> {
    let mut ds = load_dataset(&a.region)?;
    let kind = match a.features {
        FeatureChoice::Latent => FeatureKind::Latent,
        FeatureChoice::Cat6 => FeatureKind::Category6,
    };
    let matrix = match kind {
        FeatureKind::Category6 => ds.category6(),
        _ => ds.latent.clone(),
    }
    .with_context(|| format!("region {} has no {kind:?} features", ds.region()))?;
    let cat6 = ds.category6().context("building patterns needs category vectors (cat19 or cat6)")?;

    let method = match a.method {
        MethodChoice::Kmeans => Method::KMeans,
        MethodChoice::Agglo => Method::Agglomerative,
        MethodChoice::Meanshift => Method::MeanShift,
    };
    let metric = match a.metric {
        MetricChoice::Euclidean => Metric::Euclidean,
        MetricChoice::Cosine => Metric::Cosine,
    };
    let strategy = match a.strategy {
        StrategyChoice::Predrop => KStrategy::PreDrop,
        StrategyChoice::Maxscore => KStrategy::MaxScore,
    };
    let mut cfg = ClusteringConfig::new(method, a.k.unwrap_or(a.k_min.max(1))).with_seed(a.seed).with_metric(metric);
    cfg.bandwidth = a.bandwidth;

    let mut chosen_k = None;
    if method != Method::MeanShift && a.k.is_none() {
        let report = select_k(&matrix, &cfg, a.k_min, a.k_max, strategy)?;
        for (k, s) in &report.per_k {
            writeln!(out, "k={k} silhouette {s:.6}")?;
        }
        writeln!(out, "chosen k = {} ({:?})", report.chosen_k, strategy)?;
        cfg.k = report.chosen_k;
        chosen_k = Some(report.chosen_k);
    }
    let model = fit(&matrix, &cfg)?;
    let mut catalog = build_patterns(&model, &cat6, ds.region())?;
    catalog.provenance.chosen_k = chosen_k;
    catalog.provenance.features = Some(kind);
    catalog.provenance.model = Some(MODEL_FILE.to_string());
    writeln!(out, "fitted {:?} with {} patterns, inertia {:.6}", method, model.k_effective, model.inertia)?;
    for p in &catalog.patterns {
        writeln!(out, "  {} {} {} members", p.id, p.color, p.member_count)?;
    }
    ds.model = Some(StoredModel { model, features: kind });
    ds.catalog = Some(catalog);
    save_dataset(&ds, &a.region)?;
    Ok(())
}

fn print_route_set(set: &AnnotatedRouteSet, service: &RegionService, out: &mut dyn Write) -> Result<()> {
    let catalog = service.patterns();
    writeln!(
        out,
        "region {}: {} routes, segment length {} m",
        set.region,
        set.routes.len(),
        set.query.seg_len_m.unwrap_or(DEFAULT_SEGMENT_LEN_M)
    )?;
    for r in &set.routes {
        writeln!(out, "route {} ({}): {:.1} m", r.index, r.summary, r.length_m)?;
        for t in &r.trajectories {
            write!(out, "  {:<3} {:>4} samples {:>3} segments", t.label, t.samples.len(), t.segments.len())?;
            match &t.distribution {
                None => writeln!(out, "  no matched samples")?,
                Some(d) => {
                    for (id, f) in &d.fractions {
                        let name = catalog.get(*id).map(|p| p.name.as_str()).unwrap_or("?");
                        write!(out, "  {name} {:.1}%", f * 100.0)?;
                    }
                    writeln!(out)?;
                }
            }
        }
    }
    Ok(())
}

pub fn analyze(a: &AnalyzeArgs, out: &mut dyn Write) -> Result<()> {
    let service = RegionService::open(&a.region)?;
    let query = RouteQuery {
        origin: a.origin,
        destination: a.dest,
        region: service.region().to_string(),
        seg_len_m: Some(a.seg_len),
    };
    let set = service.handle_route_query(&query)?;
    print_route_set(&set, &service, out)?;
    let catalog = service.patterns();
    write_atomic(&a.out, &to_json_bytes(&set.geojson(Some(&catalog))))?;
    writeln!(out, "wrote {}", a.out.display())?;
    if let Some(path) = &a.json {
        write_atomic(path, &set.to_json_bytes())?;
        writeln!(out, "wrote {}", path.display())?;
    }
    Ok(())
}

pub fn serve(a: &ServeArgs) -> Result<()> {
    let mut registry = RegionRegistry::new();
    for dir in &a.region {
        registry.insert(RegionService::open(dir).with_context(|| format!("loading {}", dir.display()))?)?;
    }
    let addr: SocketAddr = format!("{}:{}", a.host, a.port).parse().context("bad host or port")?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(http::serve(Arc::new(registry), addr))?;
    Ok(())
}

pub fn synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let spec = SynthSpec::new(a.clusters, a.per, a.dims, a.sep, a.seed);
    let ds = generate_synthetic_region(&spec)?;
    if ds.provider_fixture.is_none() {
        bail!("{} samples are too few to lay out fixture routes; use at least 80", ds.len());
    }
    save_dataset(&ds, &a.out)?;
    let q = &ds.provider_fixture.as_ref().expect("checked above").queries[0];
    writeln!(out, "wrote {} samples ({} planted clusters) to {}", ds.len(), a.clusters, a.out.display())?;
    writeln!(
        out,
        "fixture route: --origin {},{} --dest {},{}",
        q.origin.lat, q.origin.lon, q.destination.lat, q.destination.lon
    )?;
    Ok(())
}
