#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use corpusforge::commands;
use corpusforge::config::{ConverterConfig, TiersConfig};
use corpusforge::AppConfig;
use corpusforge_core::backends::BackendConfig;
use corpusforge_core::corpus::TierRule;
use corpusforge_core::crawl::{DocExtension, SeedConfig};
use corpusforge_core::extract::OutputKind;
use corpusforge_core::SecurityTier;
use corpusforge_testkit::PDF_STUB_COMMAND;
use url::Url;

pub const BIN: &str = env!("CARGO_BIN_EXE_corpusforge");

pub const TOKENS: [(&str, SecurityTier); 3] = [
    ("tok-public", SecurityTier::Public),
    ("tok-collab", SecurityTier::Collaboration),
    ("tok-ctrl", SecurityTier::Controlled),
];

pub fn token_for(tier: SecurityTier) -> &'static str {
    TOKENS.iter().find(|(_, t)| *t == tier).unwrap().0
}

/// One distinctive document per tier, stored under a directory named after
/// the tier.
pub const TIERED_DOCS: [(SecurityTier, &str, &str); 3] = [
    (
        SecurityTier::Public,
        "cavity.md",
        "# Cavity conditioning\n\nThe radio frequency cavity conditioning log records field emission onsets \
         and multipacting barriers during warm processing.\n\nConditioning proceeds in steps of forward power.\n",
    ),
    (
        SecurityTier::Collaboration,
        "magnet.md",
        "# Magnet quench thresholds\n\nQuench detection thresholds for the dipole magnets are set from the \
         measured resistive voltage.\n\nThe protection heaters fire within ten milliseconds.\n",
    ),
    (
        SecurityTier::Controlled,
        "interlock.md",
        "# Beam abort interlock\n\nThe beam abort interlock settings and permit loop wiring are kept \
         under change control.\n\nBypass keys are logged by the shift leader.\n",
    ),
];

pub fn mock(name: &str, delay_ms: u64) -> BackendConfig {
    BackendConfig {
        delay_ms,
        ..BackendConfig::mock(name)
    }
}

/// Mock backends used throughout: a default, three slow ones for fan-out and
/// one that always fails.
pub fn standard_backends() -> BTreeMap<String, BackendConfig> {
    let mut broken = mock("broken", 0);
    broken.fail = true;
    [mock("alpha", 0), mock("slow100", 100), mock("slow150", 150), mock("slow200", 200), broken]
        .into_iter()
        .map(|b| (b.name.clone(), b))
        .collect()
}

pub fn base_config(dir: &Path) -> AppConfig {
    let mut c = AppConfig::default();
    c.paths.corpus_dir = dir.join("corpus");
    c.paths.index_dir = dir.join("index");
    c.converters.insert(
        DocExtension::Pdf,
        ConverterConfig {
            command: PDF_STUB_COMMAND.to_string(),
            timeout_ms: 10_000,
            output: OutputKind::PlainText,
        },
    );
    c.backends = standard_backends();
    c.serve.default_backend = Some("alpha".into());
    c.serve.listen = "127.0.0.1:0".into();
    c.serve.tokens = TOKENS.iter().map(|(k, t)| (k.to_string(), *t)).collect();
    c
}

/// Config that harvests the fixture site at a fast rate. Everything under
/// the seed's origin is public.
pub fn site_config(dir: &Path, seed: &str) -> AppConfig {
    let mut c = base_config(dir);
    let origin = Url::parse(seed).unwrap().origin().ascii_serialization();
    c.tiers.rules.push(TierRule {
        url_prefix: format!("{origin}/"),
        tier: SecurityTier::Public,
    });
    let mut crawl = SeedConfig::new([seed]);
    crawl.rate_limit = 100.0;
    crawl.fetch_timeout_ms = 5_000;
    c.crawl = Some(crawl);
    c
}

pub fn write_config(dir: &Path, config: &AppConfig) -> PathBuf {
    let path = dir.join("corpusforge.toml");
    std::fs::write(&path, config.render()).unwrap();
    path
}

fn tier_dir(tier: SecurityTier) -> &'static str {
    tier.as_str()
}

/// Writes, ingests and indexes the tiered documents. Tier rules match the
/// `file://` URL of each tier directory.
pub async fn tiered_workspace(dir: &Path) -> AppConfig {
    let src = dir.join("exports");
    for (tier, name, body) in TIERED_DOCS {
        let d = src.join(tier_dir(tier));
        std::fs::create_dir_all(&d).unwrap();
        std::fs::write(d.join(name), body).unwrap();
    }
    let src = src.canonicalize().unwrap();
    let mut c = base_config(dir);
    c.tiers = TiersConfig {
        rules: [SecurityTier::Public, SecurityTier::Collaboration]
            .into_iter()
            .map(|t| TierRule {
                url_prefix: Url::from_directory_path(src.join(tier_dir(t))).unwrap().to_string(),
                tier: t,
            })
            .collect(),
    };
    let mut sink = Vec::new();
    commands::ingest(&c, &src, &mut sink).await.unwrap();
    commands::index(&c, &mut sink).await.unwrap();
    c
}

/// Which tier a tiered document URL belongs to, read from its path.
pub fn tier_of_url(url: &str) -> SecurityTier {
    TIERED_DOCS
        .iter()
        .find(|(t, name, _)| url.ends_with(&format!("/{}/{name}", tier_dir(*t))))
        .map(|(t, _, _)| *t)
        .unwrap_or_else(|| panic!("unexpected url {url}"))
}

/// Serves the app on an ephemeral port; returns its base URL.
pub async fn spawn_app(config: &AppConfig) -> String {
    let app = commands::app(config).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}

/// Runs the binary with `args` after `--config path`.
pub async fn run_bin(config: &Path, args: &[&str]) -> std::process::Output {
    tokio::time::timeout(
        Duration::from_secs(60),
        tokio::process::Command::new(BIN)
            .arg("--config")
            .arg(config)
            .args(args)
            .output(),
    )
    .await
    .expect("command finished in time")
    .unwrap()
}

pub fn stdout(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &std::process::Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}
