use std::fmt::Write;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::{Backend, GenParams};

/// One timed generation request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputSample {
    pub backend: String,
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
    #[serde(with = "crate::crawl::duration_ms")]
    pub duration: Duration,
    /// Completion tokens per second of wall time.
    pub tokens_per_second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputSummary {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputReport {
    pub backend: String,
    pub samples: Vec<ThroughputSample>,
    /// Failed requests, excluded from the summary.
    pub errors: Vec<String>,
    /// `None` when no request succeeded.
    pub summary: Option<ThroughputSummary>,
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn summarize(samples: &[ThroughputSample]) -> Option<ThroughputSummary> {
    if samples.is_empty() {
        return None;
    }
    let mut rates: Vec<f64> = samples.iter().map(|s| s.tokens_per_second).collect();
    rates.sort_by(f64::total_cmp);
    Some(ThroughputSummary {
        mean: rates.iter().sum::<f64>() / rates.len() as f64,
        p50: percentile(&rates, 50.0),
        p95: percentile(&rates, 95.0),
    })
}

/// Sends every prompt `repetitions` times, strictly one request at a time.
pub async fn measure_throughput(
    backend: &dyn Backend,
    prompts: &[String],
    repetitions: usize,
    params: &GenParams,
) -> ThroughputReport {
    let mut samples = Vec::new();
    let mut errors = Vec::new();
    for _ in 0..repetitions {
        for prompt in prompts {
            let start = Instant::now();
            match backend.generate(prompt, params).await {
                Ok(g) => {
                    let duration = start.elapsed().max(Duration::from_nanos(1));
                    samples.push(ThroughputSample {
                        backend: backend.name().to_string(),
                        prompt_tokens: g.usage.prompt_tokens,
                        completion_tokens: g.usage.completion_tokens,
                        duration,
                        tokens_per_second: g.usage.completion_tokens as f64
                            / duration.as_secs_f64(),
                    });
                }
                Err(e) => errors.push(e.to_string()),
            }
        }
    }
    ThroughputReport {
        backend: backend.name().to_string(),
        summary: summarize(&samples),
        samples,
        errors,
    }
}

/// Orders reports by mean tokens/sec, fastest first; backends without any
/// successful sample go last.
pub fn rank_by_mean(reports: &mut [ThroughputReport]) {
    reports.sort_by(|a, b| {
        let ma = a.summary.as_ref().map_or(f64::NEG_INFINITY, |s| s.mean);
        let mb = b.summary.as_ref().map_or(f64::NEG_INFINITY, |s| s.mean);
        mb.total_cmp(&ma).then_with(|| a.backend.cmp(&b.backend))
    });
}

/// Per-sample table followed by one summary row per backend.
pub fn render_report(reports: &[ThroughputReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:>6} {:>13} {:>17} {:>12} {:>12}",
        "backend", "sample", "prompt_tokens", "completion_tokens", "duration_ms", "tokens/sec"
    );
    for r in reports {
        for (i, s) in r.samples.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:<16} {:>6} {:>13} {:>17} {:>12.1} {:>12.1}",
                s.backend,
                i + 1,
                s.prompt_tokens,
                s.completion_tokens,
                s.duration.as_secs_f64() * 1000.0,
                s.tokens_per_second
            );
        }
    }
    out.push('\n');
    let _ = writeln!(
        out,
        "{:<4} {:<16} {:>8} {:>7} {:>12} {:>12} {:>12}",
        "rank", "backend", "samples", "errors", "mean tok/s", "p50 tok/s", "p95 tok/s"
    );
    for (i, r) in reports.iter().enumerate() {
        match &r.summary {
            Some(s) => {
                let _ = writeln!(
                    out,
                    "{:<4} {:<16} {:>8} {:>7} {:>12.1} {:>12.1} {:>12.1}",
                    i + 1,
                    r.backend,
                    r.samples.len(),
                    r.errors.len(),
                    s.mean,
                    s.p50,
                    s.p95
                );
            }
            None => {
                let _ = writeln!(
                    out,
                    "{:<4} {:<16} {:>8} {:>7} {:>12} {:>12} {:>12}",
                    i + 1,
                    r.backend,
                    0,
                    r.errors.len(),
                    "-",
                    "-",
                    "-"
                );
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{count_tokens, mock_output, MockBackend};

    /// A prompt whose mock reply is exactly `tokens` tokens long.
    fn prompt_for(name: &str, tokens: usize) -> String {
        let head = count_tokens(&mock_output(name, ""));
        vec!["w"; tokens - head].join(" ")
    }

    #[test]
    fn prompt_helper_hits_target() {
        let p = prompt_for("m", 50);
        assert_eq!(count_tokens(&mock_output("m", &p)), 50);
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 10.0);
        assert_eq!(percentile(&v, 95.0), 19.0);
        assert_eq!(percentile(&[3.0], 95.0), 3.0);
    }

    #[tokio::test]
    async fn mock_with_fixed_delay() {
        let b = MockBackend::new("m").with_delay(Duration::from_millis(100));
        let prompts = vec![prompt_for("m", 50)];
        let r = measure_throughput(&b, &prompts, 5, &GenParams::default()).await;
        assert_eq!(r.samples.len(), 5);
        let s = r.summary.unwrap();
        assert!((s.mean - 500.0).abs() <= 50.0, "{}", s.mean);
        assert!(s.p95 >= s.p50);
        assert!(r.samples.iter().all(|s| s.completion_tokens == 50));
    }

    #[tokio::test]
    async fn failures_are_counted_not_summarized() {
        let b = MockBackend::new("down").failing(true);
        let r = measure_throughput(&b, &["q".to_string()], 3, &GenParams::default()).await;
        assert!(r.samples.is_empty());
        assert_eq!(r.errors.len(), 3);
        assert_eq!(r.summary, None);
        assert!(render_report(&[r]).contains("down"));
    }

    #[tokio::test]
    async fn ranking_by_mean() {
        let fast = MockBackend::new("fast").with_delay(Duration::from_millis(20));
        let slow = MockBackend::new("slow").with_delay(Duration::from_millis(80));
        let p = vec![prompt_for("fast", 20)];
        let mut reports = vec![
            measure_throughput(&slow, &p, 2, &GenParams::default()).await,
            measure_throughput(&fast, &p, 2, &GenParams::default()).await,
        ];
        rank_by_mean(&mut reports);
        assert_eq!(reports[0].backend, "fast");
        let table = render_report(&reports);
        let fast_row = table.lines().position(|l| l.starts_with("1    fast")).unwrap();
        let slow_row = table.lines().position(|l| l.starts_with("2    slow")).unwrap();
        assert!(fast_row < slow_row);
    }
}
