//! HTTP embedding provider.
//!
//! Speaks the common JSON embeddings protocol: a POST of
//! `{"model": …, "input": [texts…], "dimensions": …}` with a bearer token,
//! answered by `{"data": [{"embedding": […]}, …]}` in input order. The
//! bearer token is read from an environment variable named in the provider
//! configuration — keys never live in config files. Retryable failures
//! (connection errors, 429, 5xx) are retried with exponential backoff and
//! jitter; a short or mis-shaped response fails the whole batch.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbedError, Embedder, ProviderConfig};

const BACKOFF_BASE_MS: u64 = 100;
const BACKOFF_JITTER_MS: u64 = 50;

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [String],
    dimensions: usize,
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f32>,
}

/// Whether a failed attempt is worth repeating.
enum Attempt {
    Retry(EmbedError),
    Fatal(EmbedError),
}

/// Client for a remote embeddings endpoint.
pub struct RemoteEmbedder {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    dims: usize,
    api_key: String,
    max_retries: u32,
}

impl std::fmt::Debug for RemoteEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteEmbedder")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("dims", &self.dims)
            .field("api_key", &"<redacted>")
            .field("max_retries", &self.max_retries)
            .finish()
    }
}


impl RemoteEmbedder {
    /// Builds the client from `config`, resolving the API key from the
    /// environment variable the config names.
    pub fn from_config(config: &ProviderConfig) -> Result<RemoteEmbedder, EmbedError> {
        config.validate()?;
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| {
                EmbedError::InvalidConfig("remote provider requires an endpoint".to_string())
            })?;
        let key_env = config.api_key_env.clone().ok_or_else(|| {
            EmbedError::InvalidConfig(
                "remote provider requires api_key_env naming the key variable".to_string(),
            )
        })?;
        let api_key = std::env::var(&key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or(EmbedError::MissingApiKey(key_env))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .no_proxy()
            .build()
            .map_err(|e| EmbedError::ProviderUnavailable(e.to_string()))?;
        Ok(RemoteEmbedder {
            client,
            endpoint,
            model: config.model.clone(),
            dims: config.dims,
            api_key,
            max_retries: config.max_retries,
        })
    }

    fn request_once(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, Attempt> {
        let body = EmbedRequest {
            model: &self.model,
            input: texts,
            dimensions: self.dims,
        };
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| Attempt::Retry(EmbedError::ProviderUnavailable(e.to_string())))?;

        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            let snippet = truncated_body(response);
            return Err(Attempt::Retry(EmbedError::ProviderUnavailable(format!(
                "status {status}: {snippet}"
            ))));
        }
        if !status.is_success() {
            let snippet = truncated_body(response);
            return Err(Attempt::Fatal(EmbedError::ProviderUnavailable(format!(
                "status {status}: {snippet}"
            ))));
        }

        let parsed: EmbedResponse = response
            .json()
            .map_err(|e| Attempt::Fatal(EmbedError::ProviderUnavailable(e.to_string())))?;
        if parsed.data.len() != texts.len() {
            // Any partial batch poisons the whole batch.
            return Err(Attempt::Fatal(EmbedError::ProviderUnavailable(format!(
                "provider returned {} embeddings for {} inputs",
                parsed.data.len(),
                texts.len()
            ))));
        }
        let mut vectors = Vec::with_capacity(parsed.data.len());
        for datum in parsed.data {
            if datum.embedding.len() != self.dims {
                return Err(Attempt::Fatal(EmbedError::InvalidDims(format!(
                    "provider returned width {}, expected {}",
                    datum.embedding.len(),
                    self.dims
                ))));
            }
            vectors.push(datum.embedding);
        }
        Ok(vectors)
    }
}

fn truncated_body(response: reqwest::blocking::Response) -> String {
    let text = response.text().unwrap_or_default();
    let mut snippet: String = text.chars().take(200).collect();
    if snippet.len() < text.len() {
        snippet.push('…');
    }
    snippet
}

/// Sub-second jitter so synchronized clients do not retry in lockstep.
fn jitter_ms() -> u64 {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.subsec_nanos())
        .unwrap_or(0);
    u64::from(nanos) % (BACKOFF_JITTER_MS + 1)
}

impl Embedder for RemoteEmbedder {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn dims(&self) -> usize {
        self.dims
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let mut attempt = 0u32;
        loop {
            match self.request_once(texts) {
                Ok(vectors) => return Ok(vectors),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    if attempt >= self.max_retries {
                        return Err(e);
                    }
                    let backoff = BACKOFF_BASE_MS << attempt.min(8);
                    std::thread::sleep(Duration::from_millis(backoff + jitter_ms()));
                    attempt += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    /// One-thread HTTP stub: answers each scripted (status, body) to one
    /// connection, recording the raw requests it saw.
    fn serve(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let endpoint = format!("http://{}/v1/embeddings", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let seen_clone = Arc::clone(&seen);
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = match listener.accept() {
                    Ok(pair) => pair,
                    Err(_) => return,
                };
                let request = read_request(&mut stream);
                seen_clone.lock().unwrap().push(request);
                let reason = match status {
                    200 => "OK",
                    400 => "Bad Request",
                    429 => "Too Many Requests",
                    500 => "Internal Server Error",
                    _ => "Status",
                };
                let response = format!(
                    "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\n\
                     Content-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(response.as_bytes());
                let _ = stream.flush();
            }
        });
        (endpoint, seen)
    }

    fn read_request(stream: &mut std::net::TcpStream) -> String {
        let mut buf = Vec::new();
        let mut chunk = [0u8; 1024];
        // Read headers.
        while !buf.windows(4).any(|w| w == b"\r\n\r\n") {
            let n = stream.read(&mut chunk).unwrap_or(0);
            if n == 0 {
                break;
            }
            buf.extend_from_slice(&chunk[..n]);
        }
        let text = String::from_utf8_lossy(&buf).to_string();
        let content_length = text
            .lines()
            .find_map(|l| {
                let (name, value) = l.split_once(':')?;
                name.eq_ignore_ascii_case("content-length")
                    .then(|| value.trim().parse::<usize>().ok())?
            })
            .unwrap_or(0);
        let header_end = buf
            .windows(4)
            .position(|w| w == b"\r\n\r\n")
            .map(|p| p + 4)
            .unwrap_or(buf.len());
        while buf.len() < header_end + content_length {
            let n = stream.read(&mut chunk).unwrap_or(0);
            if n == 0 {
                break;
            }
            buf.extend_from_slice(&chunk[..n]);
        }
        String::from_utf8_lossy(&buf).to_string()
    }

    fn config(endpoint: &str, key_env: &str, max_retries: u32) -> ProviderConfig {
        ProviderConfig {
            kind: super::super::ProviderKind::Remote,
            model: "test-model".to_string(),
            dims: 8,
            endpoint: Some(endpoint.to_string()),
            api_key_env: Some(key_env.to_string()),
            max_retries,
            timeout_secs: 5,
            ..ProviderConfig::default()
        }
    }

    fn ok_body(count: usize) -> String {
        let data: Vec<String> = (0..count)
            .map(|i| {
                let values: Vec<String> = (0..8).map(|d| format!("0.{}{}", i + 1, d)).collect();
                format!("{{\"embedding\":[{}]}}", values.join(","))
            })
            .collect();
        format!("{{\"data\":[{}]}}", data.join(","))
    }

    #[test]
    fn posts_model_input_and_dimensions_with_bearer_key() {
        let (endpoint, seen) = serve(vec![(200, ok_body(2))]);
        std::env::set_var("LEXSTRATA_TEST_KEY_OK", "sk-test-123");
        let embedder =
            RemoteEmbedder::from_config(&config(&endpoint, "LEXSTRATA_TEST_KEY_OK", 0)).unwrap();
        let texts = vec!["primeiro texto".to_string(), "segundo texto".to_string()];
        let vectors = embedder.embed_batch(&texts).unwrap();
        assert_eq!(vectors.len(), 2);
        assert_eq!(vectors[0].len(), 8);
        assert!((vectors[0][0] - 0.10).abs() < 1e-6);

        let requests = seen.lock().unwrap();
        assert_eq!(requests.len(), 1);
        let req = requests[0].to_ascii_lowercase();
        assert!(req.contains("authorization: bearer sk-test-123"), "{req}");
        assert!(req.contains("\"model\":\"test-model\""));
        assert!(req.contains("\"dimensions\":8"));
        assert!(req.contains("primeiro texto"));
        assert!(req.contains("segundo texto"));
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let (endpoint, seen) = serve(vec![
            (500, "{\"error\":\"transient\"}".to_string()),
            (200, ok_body(1)),
        ]);
        std::env::set_var("LEXSTRATA_TEST_KEY_RETRY", "sk-retry");
        let embedder =
            RemoteEmbedder::from_config(&config(&endpoint, "LEXSTRATA_TEST_KEY_RETRY", 2))
                .unwrap();
        let vectors = embedder.embed_batch(&["texto".to_string()]).unwrap();
        assert_eq!(vectors.len(), 1);
        assert_eq!(seen.lock().unwrap().len(), 2);
    }

    #[test]
    fn gives_up_after_the_retry_budget() {
        let (endpoint, seen) = serve(vec![
            (500, "{}".to_string()),
            (500, "{}".to_string()),
        ]);
        std::env::set_var("LEXSTRATA_TEST_KEY_FAIL", "sk-fail");
        let embedder =
            RemoteEmbedder::from_config(&config(&endpoint, "LEXSTRATA_TEST_KEY_FAIL", 1)).unwrap();
        let err = embedder.embed_batch(&["texto".to_string()]).unwrap_err();
        assert!(matches!(err, EmbedError::ProviderUnavailable(_)), "{err}");
        assert_eq!(seen.lock().unwrap().len(), 2);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (endpoint, seen) = serve(vec![(400, "{\"error\":\"bad request\"}".to_string())]);
        std::env::set_var("LEXSTRATA_TEST_KEY_400", "sk-400");
        let embedder =
            RemoteEmbedder::from_config(&config(&endpoint, "LEXSTRATA_TEST_KEY_400", 3)).unwrap();
        let err = embedder.embed_batch(&["texto".to_string()]).unwrap_err();
        assert!(matches!(err, EmbedError::ProviderUnavailable(_)));
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn wrong_width_fails_the_batch() {
        let (endpoint, _) = serve(vec![(
            200,
            "{\"data\":[{\"embedding\":[0.1,0.2,0.3]}]}".to_string(),
        )]);
        std::env::set_var("LEXSTRATA_TEST_KEY_DIMS", "sk-dims");
        let embedder =
            RemoteEmbedder::from_config(&config(&endpoint, "LEXSTRATA_TEST_KEY_DIMS", 0)).unwrap();
        let err = embedder.embed_batch(&["texto".to_string()]).unwrap_err();
        assert!(matches!(err, EmbedError::InvalidDims(_)), "{err}");
    }

    #[test]
    fn short_responses_fail_the_batch() {
        let (endpoint, _) = serve(vec![(200, ok_body(1))]);
        std::env::set_var("LEXSTRATA_TEST_KEY_SHORT", "sk-short");
        let embedder =
            RemoteEmbedder::from_config(&config(&endpoint, "LEXSTRATA_TEST_KEY_SHORT", 0))
                .unwrap();
        let texts = vec!["um".to_string(), "dois".to_string()];
        let err = embedder.embed_batch(&texts).unwrap_err();
        assert!(matches!(err, EmbedError::ProviderUnavailable(_)), "{err}");
    }

    #[test]
    fn missing_key_and_endpoint_are_config_errors() {
        let err = RemoteEmbedder::from_config(&config(
            "http://127.0.0.1:1/v1",
            "LEXSTRATA_TEST_KEY_UNSET_NEVER_SET",
            0,
        ))
        .unwrap_err();
        match err {
            EmbedError::MissingApiKey(name) => {
                assert_eq!(name, "LEXSTRATA_TEST_KEY_UNSET_NEVER_SET")
            }
            other => panic!("expected MissingApiKey, got {other}"),
        }

        let mut cfg = config("http://x/v1", "K", 0);
        cfg.endpoint = None;
        assert!(matches!(
            RemoteEmbedder::from_config(&cfg),
            Err(EmbedError::InvalidConfig(_))
        ));

        let mut cfg = config("http://x/v1", "K", 0);
        cfg.api_key_env = None;
        assert!(matches!(
            RemoteEmbedder::from_config(&cfg),
            Err(EmbedError::InvalidConfig(_))
        ));
    }
}
