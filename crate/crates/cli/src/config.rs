//! `key = value` configuration files. Values become command-line flags of
//! the selected subcommand, inserted before the user's own flags so that
//! explicit flags win.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Command;
use copyloc::align::DetectorParams;

/// Parses a config file into ordered `(key, value)` pairs. Blank lines and
/// lines starting with `#` are skipped; keys may use `-` or `_`.
pub fn parse(path: &Path) -> Result<Vec<(String, String)>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("{}:{}: expected key = value", path.display(), i + 1);
        };
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            bail!("{}:{}: empty key", path.display(), i + 1);
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn is_detector_key(key: &str) -> bool {
    DetectorParams::KEYS.contains(&key.replace('-', "_").as_str())
}

/// Turns config entries into flags for `subcommand`. Keys that belong to a
/// different subcommand are skipped; keys no subcommand knows are an error.
pub fn to_flags(
    cmd: &Command,
    subcommand: &str,
    entries: &[(String, String)],
) -> Result<Vec<String>> {
    let known: BTreeSet<String> = cmd
        .get_subcommands()
        .flat_map(|s| s.get_arguments())
        .chain(cmd.get_arguments())
        .filter_map(|a| a.get_long().map(str::to_string))
        .collect();
    let sub = cmd
        .find_subcommand(subcommand)
        .with_context(|| format!("unknown subcommand {subcommand}"))?;
    let mut flags = Vec::new();
    for (key, value) in entries {
        if key == "config" || key == "jobs" {
            continue;
        }
        if is_detector_key(key) {
            if subcommand == "detect" {
                flags.push("--param".to_string());
                flags.push(format!("{}={value}", key.replace('-', "_")));
            }
            continue;
        }
        if !known.contains(key) {
            bail!("unknown config key {key:?}");
        }
        let Some(arg) = sub.get_arguments().find(|a| a.get_long() == Some(key)) else {
            continue;
        };
        if arg.get_action().takes_values() {
            flags.push(format!("--{key}"));
            flags.push(value.clone());
        } else {
            match value.as_str() {
                "true" | "1" | "yes" => flags.push(format!("--{key}")),
                "false" | "0" | "no" => {}
                other => bail!("config key {key:?} expects true or false, got {other:?}"),
            }
        }
    }
    Ok(flags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::{Arg, ArgAction};

    fn cmd() -> Command {
        Command::new("t")
            .subcommand(
                Command::new("simmat").arg(Arg::new("tau").long("tau")).arg(
                    Arg::new("export-pgm")
                        .long("export-pgm")
                        .action(ArgAction::SetTrue),
                ),
            )
            .subcommand(Command::new("detect").arg(Arg::new("method").long("method")))
    }

    #[test]
    fn maps_entries_to_flags() {
        let entries = vec![
            ("tau".to_string(), "0.2".to_string()),
            ("export-pgm".to_string(), "true".to_string()),
            ("method".to_string(), "cc".to_string()),
            ("t-bin".to_string(), "0.4".to_string()),
        ];
        assert_eq!(
            to_flags(&cmd(), "simmat", &entries).unwrap(),
            ["--tau", "0.2", "--export-pgm"]
        );
        assert_eq!(
            to_flags(&cmd(), "detect", &entries).unwrap(),
            ["--method", "cc", "--param", "t_bin=0.4"]
        );
        let bad = vec![("nope".to_string(), "1".to_string())];
        assert!(to_flags(&cmd(), "simmat", &bad).is_err());
    }

    #[test]
    fn parses_comments_and_underscores() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.conf");
        fs::write(&path, "# comment\n\nexport_pgm = true\n tau=0.5 \n").unwrap();
        let entries = parse(&path).unwrap();
        assert_eq!(
            entries,
            vec![
                ("export-pgm".into(), "true".into()),
                ("tau".into(), "0.5".into())
            ]
        );
        fs::write(&path, "broken line\n").unwrap();
        assert!(parse(&path).unwrap_err().to_string().contains(":1:"));
    }
}
