//! Line-delimited JSON logs on stderr, tagged with the run id.

use std::io::Write;
use std::sync::OnceLock;
use std::time::{SystemTime, UNIX_EPOCH};

static RUN_ID: OnceLock<String> = OnceLock::new();

/// Installs the logger; `RUST_LOG` overrides `default_level`.
pub fn init(default_level: &str) {
    let env = env_logger::Env::default().default_filter_or(default_level);
    let _ = env_logger::Builder::from_env(env)
        .format(|buf, record| {
            let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
            let line = serde_json::json!({
                "ts_ms": ts as u64,
                "level": record.level().as_str(),
                "module": record.target(),
                "run_id": RUN_ID.get(),
                "message": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        })
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Tags subsequent log lines; only the first call takes effect.
pub fn set_run_id(id: &str) {
    let _ = RUN_ID.set(id.to_string());
}
