use std::collections::BTreeSet;

use regex::Regex;
use url::Url;

use super::{CrawlConfigError, SeedConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScopeDecision {
    Accept,
    RejectExternal,
    RejectBlacklist,
    RejectScheme,
}

#[derive(Debug, Clone)]
enum Pattern {
    Substring(String),
    Wildcard(Regex),
}

impl Pattern {
    fn parse(raw: &str) -> Result<Self, CrawlConfigError> {
        if raw.contains('*') {
            let body = raw
                .split('*')
                .map(regex::escape)
                .collect::<Vec<_>>()
                .join(".*");
            Regex::new(&body)
                .map(Pattern::Wildcard)
                .map_err(|_| CrawlConfigError::InvalidPattern(raw.to_string()))
        } else {
            Ok(Pattern::Substring(raw.to_string()))
        }
    }

    fn matches(&self, path: &str) -> bool {
        match self {
            Pattern::Substring(s) => path.contains(s.as_str()),
            Pattern::Wildcard(re) => re.is_match(path),
        }
    }
}

/// Compiled crawl scope: allowed hosts plus blacklist patterns.
#[derive(Debug, Clone)]
pub struct Scope {
    hosts: BTreeSet<String>,
    allow_subdomains: bool,
    blacklist: Vec<Pattern>,
}

impl Scope {
    pub fn from_config(config: &SeedConfig) -> Result<Self, CrawlConfigError> {
        if config.seed_urls.is_empty() {
            return Err(CrawlConfigError::NoSeeds);
        }
        let mut seed_hosts = Vec::new();
        for raw in &config.seed_urls {
            let url = super::normalize_url(raw, None)?;
            if !matches!(url.scheme(), "http" | "https") {
                return Err(CrawlConfigError::SeedScheme(raw.clone()));
            }
            seed_hosts.push(url.host_str().unwrap_or_default().to_string());
        }
        let hosts: BTreeSet<String> = if config.allowed_hosts.is_empty() {
            seed_hosts.iter().cloned().collect()
        } else {
            config
                .allowed_hosts
                .iter()
                .map(|h| h.trim().to_ascii_lowercase())
                .collect()
        };
        let blacklist = config
            .blacklist_patterns
            .iter()
            .map(|p| Pattern::parse(p))
            .collect::<Result<Vec<_>, _>>()?;
        let scope = Scope {
            hosts,
            allow_subdomains: config.allow_subdomains,
            blacklist,
        };
        if let Some(h) = seed_hosts.iter().find(|h| !scope.host_allowed(h)) {
            return Err(CrawlConfigError::SeedHostNotAllowed(h.clone()));
        }
        Ok(scope)
    }

    pub fn host_allowed(&self, host: &str) -> bool {
        if self.hosts.contains(host) {
            return true;
        }
        self.allow_subdomains
            && self
                .hosts
                .iter()
                .any(|h| host.len() > h.len() && host.ends_with(h.as_str()) && host.as_bytes()[host.len() - h.len() - 1] == b'.')
    }

    pub fn blacklisted(&self, path: &str) -> bool {
        self.blacklist.iter().any(|p| p.matches(path))
    }
}

/// Scheme, then host, then blacklist; the first failing check decides.
pub fn in_scope(url: &Url, scope: &Scope) -> ScopeDecision {
    if !matches!(url.scheme(), "http" | "https") {
        return ScopeDecision::RejectScheme;
    }
    match url.host_str() {
        Some(h) if scope.host_allowed(h) => {}
        _ => return ScopeDecision::RejectExternal,
    }
    if scope.blacklisted(url.path()) {
        return ScopeDecision::RejectBlacklist;
    }
    ScopeDecision::Accept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scope(seeds: &[&str], blacklist: &[&str]) -> Scope {
        let mut cfg = SeedConfig::new(seeds.iter().copied());
        cfg.blacklist_patterns = blacklist.iter().map(|s| s.to_string()).collect();
        Scope::from_config(&cfg).unwrap()
    }

    fn decide(u: &str, s: &Scope) -> ScopeDecision {
        in_scope(&Url::parse(u).unwrap(), s)
    }

    #[test]
    fn accepts_in_host_pages() {
        let s = scope(&["http://h.org/"], &["/calendar", "/login"]);
        assert_eq!(decide("http://h.org/notes/p1", &s), ScopeDecision::Accept);
    }

    #[test]
    fn rejects_external_hosts() {
        let s = scope(&["http://h.org/"], &[]);
        assert_eq!(decide("http://other.org/x", &s), ScopeDecision::RejectExternal);
        assert_eq!(decide("http://www.h.org/x", &s), ScopeDecision::RejectExternal);
    }

    #[test]
    fn rejects_blacklisted_paths() {
        let s = scope(&["http://h.org/"], &["/login"]);
        assert_eq!(decide("http://h.org/login?next=/", &s), ScopeDecision::RejectBlacklist);
    }

    #[test]
    fn wildcard_patterns() {
        let s = scope(&["http://h.org/"], &["/events/*/ical"]);
        assert_eq!(decide("http://h.org/events/2024/ical", &s), ScopeDecision::RejectBlacklist);
        assert_eq!(decide("http://h.org/events/2024/list", &s), ScopeDecision::Accept);
    }

    #[test]
    fn rejects_non_http_schemes_first() {
        let s = scope(&["http://h.org/"], &["/login"]);
        assert_eq!(decide("mailto:a@h.org", &s), ScopeDecision::RejectScheme);
        assert_eq!(decide("ftp://h.org/login", &s), ScopeDecision::RejectScheme);
    }

    #[test]
    fn external_wins_over_blacklist() {
        let s = scope(&["http://h.org/"], &["/login"]);
        assert_eq!(decide("http://other.org/login", &s), ScopeDecision::RejectExternal);
    }

    #[test]
    fn subdomains_are_opt_in() {
        let mut cfg = SeedConfig::new(["http://h.org/"]);
        cfg.allow_subdomains = true;
        let s = Scope::from_config(&cfg).unwrap();
        assert_eq!(decide("http://www.h.org/x", &s), ScopeDecision::Accept);
        assert_eq!(decide("http://evilh.org/x", &s), ScopeDecision::RejectExternal);
    }

    #[test]
    fn config_errors() {
        let mut cfg = SeedConfig::new(Vec::<String>::new());
        assert_eq!(Scope::from_config(&cfg).unwrap_err(), CrawlConfigError::NoSeeds);
        cfg.seed_urls = vec!["http://h.org/".into()];
        cfg.allowed_hosts = vec!["other.org".into()];
        assert_eq!(
            Scope::from_config(&cfg).unwrap_err(),
            CrawlConfigError::SeedHostNotAllowed("h.org".into())
        );
        cfg.seed_urls = vec!["ftp://h.org/".into()];
        assert!(matches!(Scope::from_config(&cfg), Err(CrawlConfigError::SeedScheme(_))));
    }
}
