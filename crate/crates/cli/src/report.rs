use std::fs;
use std::path::Path;

use krfws::config::Config;

use crate::CliResult;

/// Fixed-precision float formatting for CSV cells.
pub fn num(v: f64) -> String {
    format!("{v:.6}")
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    log::info!("wrote {}", path.display());
    Ok(())
}

/// Writes the run manifest `file` into `dir`: the command, versions, inputs and the full effective
/// configuration, one `key = value` per line.
pub fn write_run_manifest(
    dir: &Path,
    file: &str,
    command: &str,
    inputs: &[(&str, String)],
    cfg: Option<&Config>,
) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    let mut text = format!(
        "command = {command}\nkrfws_version = {}\ncli_version = {}\n",
        krfws::VERSION,
        env!("CARGO_PKG_VERSION")
    );
    for (k, v) in inputs {
        text.push_str(&format!("{k} = {v}\n"));
    }
    if let Some(c) = cfg {
        text.push_str(&c.to_text());
    }
    fs::write(dir.join(file), text)?;
    Ok(())
}
