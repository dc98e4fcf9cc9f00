use url::Url;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum UrlError {
    #[error("empty URL")]
    Empty,
    #[error("relative URL `{0}` without a base")]
    RelativeWithoutBase(String),
    #[error("malformed URL `{raw}`: {reason}")]
    Malformed { raw: String, reason: String },
}

/// Canonicalize `raw`, resolving it against `base` when it is relative.
///
/// Scheme and host are lowercased, default ports and fragments dropped, dot
/// segments collapsed and percent-encoded unreserved characters in the path
/// decoded. The query string is kept exactly as written. Schemes other than
/// http(s) are accepted here and rejected by scope checks.
pub fn normalize_url(raw: &str, base: Option<&Url>) -> Result<Url, UrlError> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Err(UrlError::Empty);
    }
    let mut url = match Url::parse(raw) {
        Ok(u) => u,
        Err(url::ParseError::RelativeUrlWithoutBase) => match base {
            Some(b) => b.join(raw).map_err(|e| UrlError::Malformed {
                raw: raw.to_string(),
                reason: e.to_string(),
            })?,
            None => return Err(UrlError::RelativeWithoutBase(raw.to_string())),
        },
        Err(e) => {
            return Err(UrlError::Malformed {
                raw: raw.to_string(),
                reason: e.to_string(),
            })
        }
    };
    url.set_fragment(None);
    if !url.cannot_be_a_base() {
        let decoded = decode_unreserved(url.path());
        if decoded != url.path() {
            url.set_path(&decoded);
        }
    }
    Ok(url)
}

fn is_unreserved(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'-' | b'.' | b'_' | b'~')
}

fn hex_val(b: u8) -> Option<u8> {
    match b {
        b'0'..=b'9' => Some(b - b'0'),
        b'a'..=b'f' => Some(b - b'a' + 10),
        b'A'..=b'F' => Some(b - b'A' + 10),
        _ => None,
    }
}

/// Decodes `%XX` escapes whose byte is an unreserved character; all other
/// escapes are left untouched.
fn decode_unreserved(path: &str) -> String {
    let bytes = path.as_bytes();
    let mut out = String::with_capacity(path.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' && i + 2 < bytes.len() {
            if let (Some(h), Some(l)) = (hex_val(bytes[i + 1]), hex_val(bytes[i + 2])) {
                let v = h * 16 + l;
                if is_unreserved(v) {
                    out.push(v as char);
                    i += 3;
                    continue;
                }
            }
        }
        // Path is ASCII after url serialization.
        out.push(bytes[i] as char);
        i += 1;
    }
    out
}

/// Host of a canonical URL, lowercase, without port.
pub fn host_of(url: &Url) -> Option<&str> {
    url.host_str()
}

/// Scheme plus authority, used to key robots policies and rate limits.
pub fn origin_key(url: &Url) -> String {
    match url.port() {
        Some(p) => format!("{}://{}:{}", url.scheme(), url.host_str().unwrap_or(""), p),
        None => format!("{}://{}", url.scheme(), url.host_str().unwrap_or("")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(raw: &str, base: Option<&str>) -> String {
        let base = base.map(|b| Url::parse(b).unwrap());
        normalize_url(raw, base.as_ref()).unwrap().to_string()
    }

    #[test]
    fn collapses_dot_segments() {
        assert_eq!(norm("../b", Some("http://h.org/a/c")), "http://h.org/b");
    }

    #[test]
    fn lowercases_and_strips_port_and_fragment() {
        assert_eq!(norm("HTTP://H.ORG:80/p#sec", None), "http://h.org/p");
        assert_eq!(norm("https://H.org:443/", None), "https://h.org/");
        assert_eq!(norm("http://h.org:8080/x", None), "http://h.org:8080/x");
    }

    #[test]
    fn query_is_preserved_verbatim() {
        assert_eq!(
            norm("/q?b=2&a=1", Some("http://h.org/x")),
            "http://h.org/q?b=2&a=1"
        );
        assert_eq!(norm("http://h.org/q?%41=1", None), "http://h.org/q?%41=1");
    }

    #[test]
    fn decodes_unreserved_escapes_only() {
        assert_eq!(norm("http://h.org/%7Euser/%41b", None), "http://h.org/~user/Ab");
        assert_eq!(norm("http://h.org/a%2Fb%20c", None), "http://h.org/a%2Fb%20c");
        assert_eq!(norm("http://h.org/trailing%4", None), "http://h.org/trailing%4");
    }

    #[test]
    fn empty_path_becomes_root() {
        assert_eq!(norm("http://h.org", None), "http://h.org/");
    }

    #[test]
    fn errors() {
        assert_eq!(normalize_url("  ", None), Err(UrlError::Empty));
        assert!(matches!(
            normalize_url("/rel", None),
            Err(UrlError::RelativeWithoutBase(_))
        ));
        assert!(matches!(
            normalize_url("http://exa mple.org/", None),
            Err(UrlError::Malformed { .. })
        ));
    }

    #[test]
    fn other_schemes_are_not_errors() {
        assert_eq!(norm("mailto:someone@h.org", None), "mailto:someone@h.org");
        assert_eq!(
            norm("javascript:void(0)", Some("http://h.org/")),
            "javascript:void(0)"
        );
    }

    #[test]
    fn idempotent() {
        for raw in ["HTTP://H.ORG:80/a/./b/../c?x=1#f", "http://h.org/%7e"] {
            let once = norm(raw, None);
            assert_eq!(norm(&once, None), once);
        }
    }
}
