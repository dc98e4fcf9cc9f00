use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::body::Body;
use axum::extract::{Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Router;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

pub const PDF_BYTES: &[u8] = include_bytes!("../fixtures/report.pdf");

/// Appears in exactly one fixture page (`/docs/b.html`).
pub const QUERY_PHRASE: &str = "superconducting solenoid quench recovery procedure";

/// Chain pages `/gen/0.html .. /gen/{GEN_PAGES-1}.html`, each linking to the
/// next. Not linked from the main site.
pub const GEN_PAGES: usize = 20;

/// What a full crawl of the main site from `/index.html` must report.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SiteTruth {
    pub discovered: u64,
    pub pages_fetched: u64,
    pub documents_fetched: u64,
    pub redirects_followed: u64,
    pub filtered_external: u64,
    pub filtered_blacklist: u64,
    pub pdf_documents: u64,
}

const TRUTH: SiteTruth = SiteTruth {
    // 10 pages + 3 redirect hops + 1 pdf + 1 blacklisted + 2 external.
    discovered: 17,
    pages_fetched: 10,
    documents_fetched: 1,
    redirects_followed: 3,
    filtered_external: 2,
    filtered_blacklist: 1,
    pdf_documents: 1,
};

#[derive(Debug, Clone)]
pub struct RequestRecord {
    pub at: Instant,
    pub host: String,
    pub path: String,
    pub user_agent: Option<String>,
}

#[derive(Clone)]
struct SiteState {
    log: Arc<Mutex<Vec<RequestRecord>>>,
}

/// The bundled fixture site, served on an ephemeral localhost port.
pub struct FixtureSite {
    addr: SocketAddr,
    log: Arc<Mutex<Vec<RequestRecord>>>,
    task: JoinHandle<()>,
}

impl Drop for FixtureSite {
    fn drop(&mut self) {
        self.task.abort();
    }
}

impl FixtureSite {
    pub async fn start() -> Self {
        let log = Arc::new(Mutex::new(Vec::new()));
        let app = Router::new()
            .fallback(serve)
            .with_state(SiteState { log: log.clone() });
        let listener = TcpListener::bind("127.0.0.1:0").await.expect("bind fixture site");
        let addr = listener.local_addr().expect("local addr");
        let task = tokio::spawn(async move {
            axum::serve(listener, app).await.expect("fixture site");
        });
        FixtureSite { addr, log, task }
    }

    pub fn truth() -> SiteTruth {
        TRUTH
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    pub fn requests(&self) -> Vec<RequestRecord> {
        self.log.lock().unwrap().clone()
    }

    pub fn clear_requests(&self) {
        self.log.lock().unwrap().clear();
    }
}

fn html(body: &str) -> Response {
    (
        [(header::CONTENT_TYPE, "text/html; charset=utf-8")],
        body.to_string(),
    )
        .into_response()
}

fn redirect(status: StatusCode, location: &str) -> Response {
    let mut r = Response::new(Body::empty());
    *r.status_mut() = status;
    r.headers_mut()
        .insert(header::LOCATION, HeaderValue::from_str(location).unwrap());
    r
}

fn page(title: &str, main: &str) -> String {
    format!(
        r#"<!DOCTYPE html>
<html lang="en">
<head><meta charset="utf-8"><title>{title}</title>
<script>window.analytics = "ignored";</script></head>
<body>
<header><nav><a href="/index.html">Home</a> | <a href="/about.html">About</a> | <a href="/calendar/2024.html">Calendar</a></nav></header>
<main>
{main}
</main>
<footer><p>Fixture Lab, operations group. <a href="/glossary.html">Glossary</a></p></footer>
</body>
</html>
"#
    )
}

fn main_page(path: &str, host: &str) -> Option<String> {
    Some(match path {
        "/" | "/index.html" => page(
            "Fixture Lab Knowledge Base",
            r#"<h1>Fixture Lab Knowledge Base</h1>
<p>Collected operations notes for the fixture accelerator complex. Start with the
<a href="/docs/a.html">injector notes</a>, the <a href="/docs/b.html">magnet notes</a>
or the <a href="/docs/c.html">cryogenics notes</a>.</p>
<ul>
<li><a href="/team.html">Who runs what</a></li>
<li><a href="/news.html">News</a></li>
<li><a href="/files/report.pdf">Commissioning report (PDF)</a></li>
<li><a href="/r1">Old landing page</a></li>
</ul>
<p>Partner material lives at the <a href="https://partner.example.org/collab">partner lab</a>
and in the <a href="http://archive.example.net/">external archive</a>.</p>"#,
        ),
        "/about.html" => page(
            "About",
            r#"<h1>About this site</h1>
<p>The knowledge base preserves procedures that used to live in personal notebooks.
Maintained by the <a href="/team.html">operations team</a>.</p>"#,
        ),
        "/docs/a.html" => page(
            "Injector notes",
            r#"<h1>Injector notes</h1>
<h2>Ion source</h2>
<p>The ion source is conditioned for <strong>four hours</strong> after every vent.
Arc current is raised in steps of 0.5 A.</p>
<h2>Linac</h2>
<p>RF phase scans are repeated after any klystron swap.</p>
<pre><code>phase_scan --cavity 3 --step 2deg</code></pre>"#,
        ),
        "/docs/b.html" => page(
            "Magnet notes",
            &format!(
                r#"<h1>Magnet notes</h1>
<p>The {QUERY_PHRASE} starts by confirming that the dump resistor has absorbed
the stored energy. Wait for the coil temperature to fall below 6 K before ramping again.</p>
<table><tr><th>Step</th><th>Action</th></tr>
<tr><td>1</td><td>Verify dump resistor temperature</td></tr>
<tr><td>2</td><td>Re-enable the quench detector</td></tr></table>
<p>Related: <a href="/docs/c.html">cryogenics notes</a>.</p>"#
            ),
        ),
        "/docs/c.html" => page(
            "Cryogenics notes",
            r#"<h1>Cryogenics notes</h1>
<p>Helium refrigerator maintenance is scheduled during the <em>summer shutdown</em>.
Cold box purity is checked weekly.</p>"#,
        ),
        "/team.html" => page(
            "Team",
            r#"<h1>Team</h1>
<ul><li>Shift leaders rotate weekly.</li><li>Run coordinators approve access.</li></ul>
<p>Back to <a href="/about.html">about</a>.</p>"#,
        ),
        "/news.html" => page(
            "News",
            r#"<h1>News</h1>
<p>See the <a href="/news/2023.html">2023 archive</a> for older items.</p>"#,
        ),
        "/news/2023.html" => page(
            "News 2023",
            r#"<h1>2023</h1>
<p>The polarized source reached record polarization in the spring test.</p>"#,
        ),
        "/glossary.html" => page(
            "Glossary",
            r#"<h1>Glossary</h1>
<p><strong>Quench</strong>: loss of superconductivity in a magnet coil.</p>
<p><strong>Linac</strong>: linear accelerator.</p>"#,
        ),
        "/landing.html" => page(
            "Landing",
            r#"<h1>Landing</h1>
<p>The old landing page moved here after three redirects.</p>"#,
        ),
        "/calendar/2024.html" => page("Calendar", "<h1>Calendar</h1><p>Never crawled.</p>"),
        "/private/notes.html" => page("Private", "<h1>Private</h1><p>Disallowed by robots.</p>"),
        _ => {
            let n: usize = path.strip_prefix("/gen/")?.strip_suffix(".html")?.parse().ok()?;
            if n >= GEN_PAGES {
                return None;
            }
            let next = if n + 1 < GEN_PAGES {
                format!(r#"<a href="http://{host}/gen/{}.html">next</a>"#, n + 1)
            } else {
                String::new()
            };
            format!("<!DOCTYPE html><html><head><title>Generated {n}</title></head><body><h1>Page {n}</h1><p>{next}</p></body></html>")
        }
    })
}

async fn serve(State(state): State<SiteState>, req: Request) -> Response {
    let path = req.uri().path().to_string();
    let host = req
        .headers()
        .get(header::HOST)
        .and_then(|h| h.to_str().ok())
        .unwrap_or_default()
        .to_string();
    state.log.lock().unwrap().push(RequestRecord {
        at: Instant::now(),
        host: host.clone(),
        path: path.clone(),
        user_agent: req
            .headers()
            .get(header::USER_AGENT)
            .and_then(|h| h.to_str().ok())
            .map(str::to_string),
    });
    match path.as_str() {
        "/robots.txt" => (
            [(header::CONTENT_TYPE, "text/plain")],
            "User-agent: *\nDisallow: /private/\n",
        )
            .into_response(),
        "/r1" => redirect(StatusCode::MOVED_PERMANENTLY, "/r2"),
        "/r2" => redirect(StatusCode::FOUND, "r3"),
        "/r3" => redirect(
            StatusCode::TEMPORARY_REDIRECT,
            &format!("http://{host}/landing.html"),
        ),
        "/files/report.pdf" => ([(header::CONTENT_TYPE, "application/pdf")], PDF_BYTES).into_response(),
        _ => match main_page(&path, &host) {
            Some(body) => html(&body),
            None => (StatusCode::NOT_FOUND, "not found").into_response(),
        },
    }
}
