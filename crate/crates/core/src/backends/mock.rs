use std::time::Duration;

use async_trait::async_trait;

use super::{count_tokens, Backend, BackendError, GenParams, Generation, Usage};
use crate::orchestrator::parse_provenance_line;

/// Deterministic stand-in for a decoder model.
///
/// Replies with `MOCK[<name>]: <chunk ids>` followed by the last line of the
/// prompt, where the chunk ids are those of the provenance lines found in
/// the prompt, in order.
#[derive(Debug, Clone)]
pub struct MockBackend {
    name: String,
    delay: Duration,
    fail: bool,
}

impl MockBackend {
    pub fn new(name: impl Into<String>) -> Self {
        MockBackend {
            name: name.into(),
            delay: Duration::ZERO,
            fail: false,
        }
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn failing(mut self, fail: bool) -> Self {
        self.fail = fail;
        self
    }
}

pub fn mock_output(name: &str, prompt: &str) -> String {
    let ids: Vec<&str> = prompt
        .lines()
        .filter_map(|l| parse_provenance_line(l).map(|(id, _)| id))
        .collect();
    let last = prompt.lines().last().unwrap_or("");
    format!("MOCK[{name}]: {}\n{last}", ids.join(", "))
}

#[async_trait]
impl Backend for MockBackend {
    fn name(&self) -> &str {
        &self.name
    }

    async fn generate(&self, prompt: &str, _params: &GenParams) -> Result<Generation, BackendError> {
        if !self.delay.is_zero() {
            tokio::time::sleep(self.delay).await;
        }
        if self.fail {
            return Err(BackendError::ForcedFailure(self.name.clone()));
        }
        let text = mock_output(&self.name, prompt);
        let usage = Usage {
            prompt_tokens: count_tokens(prompt),
            completion_tokens: count_tokens(&text),
        };
        Ok(Generation { text, usage })
    }
}

#[cfg(test)]
mod tests {
    use std::time::Instant;

    use super::*;
    use crate::orchestrator::provenance_line;

    #[tokio::test]
    async fn echoes_provenance_ids_and_question() {
        let prompt = format!(
            "{}\nfirst chunk\n{}\nsecond chunk\nWhat is X?",
            provenance_line("X#0001", "http://h.org/x"),
            provenance_line("Y#0002", "http://h.org/y")
        );
        let g = MockBackend::new("local").generate(&prompt, &GenParams::default()).await.unwrap();
        assert_eq!(g.text, "MOCK[local]: X#0001, Y#0002\nWhat is X?");
        assert_eq!(g.usage.completion_tokens, count_tokens(&g.text));
        assert_eq!(g.usage.prompt_tokens, count_tokens(&prompt));
    }

    #[tokio::test]
    async fn deterministic() {
        let b = MockBackend::new("m");
        let p = "question only";
        let a = b.generate(p, &GenParams::default()).await.unwrap();
        let c = b.generate(p, &GenParams::default()).await.unwrap();
        assert_eq!(a, c);
    }

    #[tokio::test]
    async fn delay_and_failure() {
        let b = MockBackend::new("slow").with_delay(Duration::from_millis(200));
        let t = Instant::now();
        b.generate("q", &GenParams::default()).await.unwrap();
        assert!(t.elapsed() >= Duration::from_millis(200));

        let f = MockBackend::new("bad").failing(true);
        assert!(matches!(
            f.generate("q", &GenParams::default()).await,
            Err(BackendError::ForcedFailure(n)) if n == "bad"
        ));
    }
}
