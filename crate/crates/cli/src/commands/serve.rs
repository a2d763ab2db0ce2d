use std::io::Write;
use std::sync::Arc;

use clap::Args;
use sentiscope_core::canonical_vocabulary;
use sentiscope_service::{serve, Campaign, CampaignConfig};

use crate::config::CliConfig;
use crate::error::{CliError, Result};
use crate::workspace::load_manifest;

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Address to listen on; port 0 picks a free port.
    #[arg(long, env = "SENTISCOPE_BIND")]
    pub bind: Option<String>,

    /// Distinct annotators wanted per image.
    #[arg(long, env = "SENTISCOPE_COVERAGE_TARGET")]
    pub coverage_target: Option<usize>,
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        () = ctrl_c => {}
        () = term => {}
    }
}

pub fn run(cfg: &CliConfig, _args: &ServeArgs) -> Result<()> {
    let mut corpus: Vec<_> = load_manifest(&cfg.manifest_path())?.into_values().collect();
    corpus.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let mut campaign = CampaignConfig::new(corpus, canonical_vocabulary(), cfg.journal_path());
    campaign.coverage_target = cfg.coverage_target;
    campaign.seed = cfg.seed;
    let campaign = Arc::new(Campaign::open(campaign)?);

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::io("starting runtime"))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&cfg.bind)
            .await
            .map_err(CliError::io(format!("binding {}", cfg.bind)))?;
        let addr = listener.local_addr().map_err(CliError::io("reading bound address"))?;
        println!("listening on http://{addr}");
        let _ = std::io::stdout().flush();
        serve(listener, campaign, shutdown_signal())
            .await
            .map_err(CliError::io("serving"))
    })
}
