//! Optional TOML configuration for `serve`. Flags take precedence, then the
//! bind-address environment variables, then this file, then built-in defaults.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

pub const OCSP_BIND_ENV: &str = "HOCSP_OCSP_BIND";
pub const CRL_BIND_ENV: &str = "HOCSP_CRL_BIND";
pub const DEFAULT_OCSP_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_CRL_BIND: &str = "127.0.0.1:8081";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeFile {
    pub dir: Option<PathBuf>,
    pub ocsp_bind: Option<SocketAddr>,
    pub crl_bind: Option<SocketAddr>,
    pub refresh_interval_s: Option<u64>,
    pub max_staleness_s: Option<u64>,
    pub include_responder_cert: Option<bool>,
}

impl ServeFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServeSettings {
    pub dir: PathBuf,
    pub ocsp_bind: SocketAddr,
    pub crl_bind: SocketAddr,
    pub refresh_interval_s: u64,
    pub max_staleness_s: Option<u64>,
    pub include_responder_cert: bool,
}

/// Values given on the command line; `None` means the flag was absent.
#[derive(Debug, Default)]
pub struct ServeFlags {
    pub dir: Option<PathBuf>,
    pub ocsp_bind: Option<SocketAddr>,
    pub crl_bind: Option<SocketAddr>,
    pub refresh_interval_s: Option<u64>,
    pub max_staleness_s: Option<u64>,
    pub no_responder_cert: bool,
}

fn env_addr(name: &str, lookup: &impl Fn(&str) -> Option<String>) -> anyhow::Result<Option<SocketAddr>> {
    lookup(name)
        .map(|v| v.parse().with_context(|| format!("{name}={v} is not a socket address")))
        .transpose()
}

pub fn resolve(flags: ServeFlags, file: ServeFile, env: impl Fn(&str) -> Option<String>) -> anyhow::Result<ServeSettings> {
    let dir = flags.dir.or(file.dir).context("no CA directory: pass --dir or set dir in the config file")?;
    let ocsp_bind = match flags.ocsp_bind.or(env_addr(OCSP_BIND_ENV, &env)?).or(file.ocsp_bind) {
        Some(a) => a,
        None => DEFAULT_OCSP_BIND.parse()?,
    };
    let crl_bind = match flags.crl_bind.or(env_addr(CRL_BIND_ENV, &env)?).or(file.crl_bind) {
        Some(a) => a,
        None => DEFAULT_CRL_BIND.parse()?,
    };
    let refresh_interval_s = flags.refresh_interval_s.or(file.refresh_interval_s).unwrap_or(3600);
    anyhow::ensure!(refresh_interval_s >= 1, "refresh interval must be at least 1 s");
    Ok(ServeSettings {
        dir,
        ocsp_bind,
        crl_bind,
        refresh_interval_s,
        max_staleness_s: flags.max_staleness_s.or(file.max_staleness_s),
        include_responder_cert: !flags.no_responder_cert && file.include_responder_cert.unwrap_or(true),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let file: ServeFile = toml::from_str(
            "dir = \"/srv/ca\"\nocsp_bind = \"0.0.0.0:9000\"\ncrl_bind = \"0.0.0.0:9001\"\nrefresh_interval_s = 60\n",
        )
        .unwrap();
        let env = |k: &str| (k == CRL_BIND_ENV).then(|| "127.0.0.1:7001".to_string());
        let flags = ServeFlags { refresh_interval_s: Some(2), ..Default::default() };
        let s = resolve(flags, file, env).unwrap();
        assert_eq!(s.dir, PathBuf::from("/srv/ca"));
        assert_eq!(s.ocsp_bind, "0.0.0.0:9000".parse().unwrap());
        assert_eq!(s.crl_bind, "127.0.0.1:7001".parse().unwrap());
        assert_eq!(s.refresh_interval_s, 2);
        assert!(s.include_responder_cert);

        let flags = ServeFlags { dir: Some("x".into()), ocsp_bind: Some("127.0.0.1:1".parse().unwrap()), ..Default::default() };
        let s = resolve(flags, ServeFile::default(), |_| Some("127.0.0.1:2".into())).unwrap();
        assert_eq!(s.ocsp_bind, "127.0.0.1:1".parse().unwrap());
        assert_eq!(s.crl_bind, "127.0.0.1:2".parse().unwrap());
    }

    #[test]
    fn rejects_unknown_keys_and_missing_dir() {
        assert!(toml::from_str::<ServeFile>("colour = 1").is_err());
        assert!(resolve(ServeFlags::default(), ServeFile::default(), |_| None).is_err());
    }
}
