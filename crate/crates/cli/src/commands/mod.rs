pub mod evaluate;
pub mod generate;
pub mod simulate;
pub mod summarize;

use electosim_core::backend::{HttpBackend, SystemClock, UreqTransport, API_KEY_ENV};

use crate::config::Loaded;
use crate::error::CliError;

/// Wire backend from the config, falling back to the environment for the
/// base URL. The API key always comes from the environment.
pub fn http_backend(cfg: &Loaded) -> Result<HttpBackend<UreqTransport>, CliError> {
    let b = &cfg.config.backend;
    let policy = b.policy.clone();
    let transport = match &b.base_url {
        Some(url) => {
            let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
            UreqTransport::new(url, key, policy.timeout)
        }
        None => UreqTransport::from_env(policy.timeout).map_err(|e| CliError::Config(e.to_string()))?,
    };
    Ok(HttpBackend::with_transport(transport, policy, SystemClock::default()))
}
