//! Chat-completion client port.
//!
//! Three interchangeable backends behind one `complete(system, user)` call:
//!
//! * `Http` POSTs an OpenAI-compatible chat-completion body and retries
//!   429/5xx/transport failures with exponential backoff;
//! * `Mock` answers deterministically from a SHA-256 of the prompts, echoing
//!   any action names it finds in the runtime prompt (so pipelines run
//!   end-to-end without a network);
//! * `Replay` serves exchanges recorded earlier and never touches the
//!   network.
//!
//! Any backend can record its exchanges as JSON fixtures for later replay.
//! Fixtures and logs never contain credentials; the API key is read from an
//! environment variable at call time and only ever becomes a header.

use std::fs;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key. Empty means
    /// the endpoint needs no credentials (local servers).
    pub api_key_env: String,
    pub temperature: f64,
    pub max_tokens: usize,
    pub timeout_ms: u64,
    pub max_retries: usize,
    /// First backoff delay; doubles per retry.
    pub backoff_base_ms: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: "http://localhost:8080/v1/chat/completions".into(),
            model: "llama-3.1-70b".into(),
            api_key_env: "LLM_API_KEY".into(),
            temperature: 0.0,
            max_tokens: 256,
            timeout_ms: 30_000,
            max_retries: 3,
            backoff_base_ms: 500,
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.timeout_ms == 0 {
            return Err(LlmError::Config("timeout_ms must be > 0".into()));
        }
        if self.temperature < 0.0 {
            return Err(LlmError::Config("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

/// One completed request/response, kept for audit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatExchange {
    pub system: String,
    pub user: String,
    pub response: String,
    pub latency_ms: u64,
    pub attempts: u32,
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("llm config: {0}")]
    Config(String),

    #[error("missing credentials: environment variable {0} is not set")]
    MissingCredentials(String),

    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },

    #[error("retries exhausted after {attempts} attempts, last status {status}")]
    RetriesExhausted { attempts: u32, status: u16 },

    #[error("http status {status}")]
    Status { status: u16 },

    #[error("malformed completion response: {0}")]
    MalformedResponse(String),

    #[error("empty completion")]
    EmptyCompletion,

    #[error("no recorded fixture for key {0}")]
    FixtureMissing(String),

    #[error("fixture i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("fixture format: {0}")]
    Json(#[from] serde_json::Error),
}

/// The client port.
pub enum LlmClient {
    Http {
        config: LlmConfig,
        record: Option<PathBuf>,
    },
    Mock {
        record: Option<PathBuf>,
    },
    Replay {
        dir: PathBuf,
    },
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    temperature: f64,
    max_tokens: usize,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ChatResponseMessage {
    content: String,
}

/// Fixture file contents. Deliberately free of headers and credentials.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordedExchange {
    pub key: String,
    pub system: String,
    pub user: String,
    pub response: String,
}

/// Stable fixture/mock key for a prompt pair.
pub fn prompt_key(system: &str, user: &str) -> String {
    crate::rng::sha256_hex(&[system.as_bytes(), &[0x1f], user.as_bytes()])
}

/// Actions mentioned in runtime-prompt segment lines, in order.
/// Lines look like `[0.0 s – 3.0 s] walking (confidence 0.90)`.
fn actions_in_prompt(user: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for line in user.lines() {
        let Some(close) = line.find("] ") else { continue };
        let Some(open) = line.rfind(" (confidence") else { continue };
        if close + 2 >= open || !line.starts_with('[') {
            continue;
        }
        let action = line[close + 2..open].trim();
        if !action.is_empty() && out.last().map(String::as_str) != Some(action) {
            out.push(action.to_string());
        }
    }
    out
}

fn mock_response(system: &str, user: &str) -> String {
    let key = prompt_key(system, user);
    let actions = actions_in_prompt(user);
    if actions.is_empty() {
        format!("[mock {}] The recording shows no clearly identified activity.", &key[..12])
    } else {
        format!(
            "[mock {}] Over the recording the person is seen {}.",
            &key[..12],
            actions.join(", then ")
        )
    }
}

impl LlmClient {
    pub fn mock() -> Self {
        LlmClient::Mock { record: None }
    }

    /// Send a system+user prompt pair and return the first choice's text.
    pub fn complete(&self, system: &str, user: &str) -> Result<ChatExchange, LlmError> {
        let started = Instant::now();
        let exchange = match self {
            LlmClient::Mock { record } => {
                let response = mock_response(system, user);
                let exchange = ChatExchange {
                    system: system.to_string(),
                    user: user.to_string(),
                    response,
                    latency_ms: 0,
                    attempts: 1,
                };
                maybe_record(record.as_deref(), &exchange)?;
                exchange
            }
            LlmClient::Replay { dir } => {
                let key = prompt_key(system, user);
                let path = dir.join(format!("{key}.json"));
                if !path.is_file() {
                    return Err(LlmError::FixtureMissing(key));
                }
                let recorded: RecordedExchange =
                    serde_json::from_str(&fs::read_to_string(&path)?)?;
                ChatExchange {
                    system: system.to_string(),
                    user: user.to_string(),
                    response: recorded.response,
                    latency_ms: 0,
                    attempts: 1,
                }
            }
            LlmClient::Http { config, record } => {
                let exchange = http_complete(config, system, user, started)?;
                maybe_record(record.as_deref(), &exchange)?;
                exchange
            }
        };
        if exchange.response.trim().is_empty() {
            return Err(LlmError::EmptyCompletion);
        }
        Ok(exchange)
    }
}

fn maybe_record(dir: Option<&std::path::Path>, exchange: &ChatExchange) -> Result<(), LlmError> {
    let Some(dir) = dir else { return Ok(()) };
    fs::create_dir_all(dir)?;
    let key = prompt_key(&exchange.system, &exchange.user);
    let recorded = RecordedExchange {
        key: key.clone(),
        system: exchange.system.clone(),
        user: exchange.user.clone(),
        response: exchange.response.clone(),
    };
    fs::write(
        dir.join(format!("{key}.json")),
        serde_json::to_string_pretty(&recorded)? + "\n",
    )?;
    Ok(())
}

fn api_key(config: &LlmConfig) -> Result<Option<String>, LlmError> {
    if config.api_key_env.is_empty() {
        return Ok(None);
    }
    match std::env::var(&config.api_key_env) {
        Ok(value) if !value.is_empty() => Ok(Some(value)),
        _ => Err(LlmError::MissingCredentials(config.api_key_env.clone())),
    }
}

fn http_complete(
    config: &LlmConfig,
    system: &str,
    user: &str,
    started: Instant,
) -> Result<ChatExchange, LlmError> {
    config.validate()?;
    let key = api_key(config)?;
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
        .http_status_as_error(false)
        .build()
        .into();

    let body = ChatRequest {
        model: &config.model,
        messages: [
            ChatMessage {
                role: "system",
                content: system,
            },
            ChatMessage {
                role: "user",
                content: user,
            },
        ],
        temperature: config.temperature,
        max_tokens: config.max_tokens,
    };

    let max_attempts = config.max_retries as u32 + 1;
    let mut attempt = 0u32;
    loop {
        attempt += 1;
        let mut request = agent.post(&config.endpoint);
        if let Some(key) = &key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let outcome = request.send_json(&body);
        let retriable_status = match outcome {
            Ok(mut response) => {
                let status = response.status().as_u16();
                if (200..300).contains(&status) {
                    let parsed: ChatResponse = response
                        .body_mut()
                        .read_json()
                        .map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
                    let text = parsed
                        .choices
                        .first()
                        .map(|c| c.message.content.clone())
                        .ok_or_else(|| LlmError::MalformedResponse("no choices".into()))?;
                    return Ok(ChatExchange {
                        system: system.to_string(),
                        user: user.to_string(),
                        response: text,
                        latency_ms: started.elapsed().as_millis() as u64,
                        attempts: attempt,
                    });
                }
                if status == 429 || (500..600).contains(&status) {
                    Some(status)
                } else {
                    return Err(LlmError::Status { status });
                }
            }
            Err(err) => {
                if attempt >= max_attempts {
                    return Err(LlmError::Transport {
                        attempts: attempt,
                        message: err.to_string(),
                    });
                }
                None
            }
        };
        if attempt >= max_attempts {
            return Err(LlmError::RetriesExhausted {
                attempts: attempt,
                status: retriable_status.unwrap_or(0),
            });
        }
        // Exponential backoff: base, 2x, 4x, ...
        let delay = config.backoff_base_ms.saturating_mul(1u64 << (attempt - 1).min(16));
        std::thread::sleep(Duration::from_millis(delay));
    }
}

/// The backoff schedule for a config; exposed so tests can assert it is
/// non-decreasing without sleeping through it.
pub fn backoff_schedule_ms(config: &LlmConfig) -> Vec<u64> {
    (0..config.max_retries as u32)
        .map(|attempt| config.backoff_base_ms.saturating_mul(1u64 << attempt.min(16)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    #[test]
    fn mock_is_a_pure_function_of_the_prompts() {
        let client = LlmClient::mock();
        let a = client.complete("sys", "user").unwrap();
        let b = client.complete("sys", "user").unwrap();
        assert_eq!(a.response, b.response);
        let c = client.complete("sys", "other").unwrap();
        assert_ne!(a.response, c.response);
    }

    #[test]
    fn mock_echoes_segment_actions() {
        let user = "Detected action segments:\n[0.0 s \u{2013} 3.0 s] walking (confidence 0.90)\n[3.0 s \u{2013} 5.0 s] sitting (confidence 0.80)\n";
        let client = LlmClient::mock();
        let exchange = client.complete("sys", user).unwrap();
        assert!(exchange.response.contains("walking"));
        assert!(exchange.response.contains("sitting"));
    }

    #[test]
    fn record_then_replay_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let recorder = LlmClient::Mock {
            record: Some(dir.path().to_path_buf()),
        };
        let recorded = recorder.complete("sys", "prompt").unwrap();

        let replayer = LlmClient::Replay {
            dir: dir.path().to_path_buf(),
        };
        let replayed = replayer.complete("sys", "prompt").unwrap();
        assert_eq!(replayed.response, recorded.response);

        let missing = replayer.complete("sys", "unseen prompt");
        assert!(matches!(missing, Err(LlmError::FixtureMissing(_))));
    }

    #[test]
    fn fixtures_never_contain_credentials() {
        let dir = tempfile::tempdir().unwrap();
        std::env::set_var("GRAYCAP_TEST_SECRET_42", "super-secret-token");
        let recorder = LlmClient::Mock {
            record: Some(dir.path().to_path_buf()),
        };
        recorder.complete("sys", "prompt").unwrap();
        for entry in fs::read_dir(dir.path()).unwrap() {
            let text = fs::read_to_string(entry.unwrap().path()).unwrap();
            assert!(!text.contains("super-secret-token"));
            assert!(!text.to_lowercase().contains("authorization"));
        }
        std::env::remove_var("GRAYCAP_TEST_SECRET_42");
    }

    #[test]
    fn backoff_is_nondecreasing() {
        let config = LlmConfig {
            max_retries: 5,
            ..LlmConfig::default()
        };
        let schedule = backoff_schedule_ms(&config);
        assert_eq!(schedule.len(), 5);
        assert_eq!(schedule[0], 500);
        assert_eq!(schedule[1], 1000);
        for pair in schedule.windows(2) {
            assert!(pair[0] <= pair[1]);
        }
    }

    /// Minimal scripted HTTP server: answers each connection with the next
    /// status in the script, then shuts down.
    fn scripted_server(statuses: Vec<u16>) -> (String, std::thread::JoinHandle<()>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            for status in statuses {
                let (mut stream, _) = listener.accept().unwrap();
                // Drain the request: headers, then content-length bytes.
                let mut buf = Vec::new();
                let mut byte = [0u8; 1];
                while !buf.ends_with(b"\r\n\r\n") {
                    if stream.read(&mut byte).unwrap() == 0 {
                        break;
                    }
                    buf.push(byte[0]);
                }
                let header_text = String::from_utf8_lossy(&buf).to_lowercase();
                let content_length: usize = header_text
                    .lines()
                    .find_map(|l| l.strip_prefix("content-length:"))
                    .and_then(|v| v.trim().parse().ok())
                    .unwrap_or(0);
                let mut body = vec![0u8; content_length];
                stream.read_exact(&mut body).unwrap();

                let payload = if (200..300).contains(&status) {
                    r#"{"choices":[{"message":{"role":"assistant","content":"scripted caption"}}]}"#
                } else {
                    r#"{"error":"scripted failure"}"#
                };
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                    payload.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}/v1/chat/completions"), handle)
    }

    fn test_config(endpoint: String, max_retries: usize) -> LlmConfig {
        LlmConfig {
            endpoint,
            api_key_env: String::new(),
            max_retries,
            backoff_base_ms: 1,
            timeout_ms: 5_000,
            ..LlmConfig::default()
        }
    }

    #[test]
    fn http_retries_5xx_then_succeeds() {
        let (endpoint, server) = scripted_server(vec![500, 500, 200]);
        let client = LlmClient::Http {
            config: test_config(endpoint, 3),
            record: None,
        };
        let exchange = client.complete("sys", "user").unwrap();
        assert_eq!(exchange.attempts, 3);
        assert_eq!(exchange.response, "scripted caption");
        server.join().unwrap();
    }

    #[test]
    fn http_exhausts_retries_on_429() {
        let (endpoint, server) = scripted_server(vec![429, 429, 429, 429]);
        let client = LlmClient::Http {
            config: test_config(endpoint, 3),
            record: None,
        };
        let err = client.complete("sys", "user").unwrap_err();
        match err {
            LlmError::RetriesExhausted { attempts, status } => {
                assert_eq!(attempts, 4); // 1 initial + 3 retries
                assert_eq!(status, 429);
            }
            other => panic!("unexpected error {other}"),
        }
        server.join().unwrap();
    }

    #[test]
    fn http_does_not_retry_client_errors() {
        let (endpoint, server) = scripted_server(vec![400]);
        let client = LlmClient::Http {
            config: test_config(endpoint, 3),
            record: None,
        };
        let err = client.complete("sys", "user").unwrap_err();
        assert!(matches!(err, LlmError::Status { status: 400 }));
        server.join().unwrap();
    }

    #[test]
    fn timeout_surfaces_attempt_count() {
        // A server that accepts connections but never answers.
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let mut held = Vec::new();
            for _ in 0..2 {
                if let Ok((stream, _)) = listener.accept() {
                    held.push(stream);
                }
            }
            std::thread::sleep(std::time::Duration::from_millis(400));
            drop(held);
        });
        let config = LlmConfig {
            endpoint: format!("http://{addr}/v1/chat/completions"),
            api_key_env: String::new(),
            timeout_ms: 50,
            max_retries: 1,
            backoff_base_ms: 1,
            ..LlmConfig::default()
        };
        let client = LlmClient::Http {
            config,
            record: None,
        };
        let err = client.complete("sys", "user").unwrap_err();
        match err {
            LlmError::Transport { attempts, .. } => assert_eq!(attempts, 2),
            other => panic!("expected transport error, got {other}"),
        }
        server.join().unwrap();
    }

    #[test]
    fn missing_credentials_is_an_error() {
        let config = LlmConfig {
            api_key_env: "GRAYCAP_TEST_UNSET_KEY".into(),
            ..LlmConfig::default()
        };
        let client = LlmClient::Http {
            config,
            record: None,
        };
        let err = client.complete("sys", "user").unwrap_err();
        assert!(matches!(err, LlmError::MissingCredentials(_)));
    }
}
