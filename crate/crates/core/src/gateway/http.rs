use serde_json::{json, Value};

use super::{BackendConfig, BackendError, CompletionBackend, CompletionRequest};

/// OpenAI-style `/v1/completions` client.
///
/// Sends `{model, prompt, temperature, max_tokens}` and reads
/// `choices[0].text`, falling back to `choices[0].message.content`.
#[derive(Debug, Default)]
pub struct HttpBackend {
    agent: Option<ureq::Agent>,
}

impl HttpBackend {
    pub fn new(config: &BackendConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.request_timeout()).build();
        HttpBackend { agent: Some(agent) }
    }
}

fn classify(err: ureq::Error) -> BackendError {
    match err {
        ureq::Error::Status(code, resp) => {
            let body = resp.into_string().unwrap_or_default();
            let msg = format!("HTTP {code}: {}", body.chars().take(200).collect::<String>());
            if code == 408 || code == 429 || code >= 500 {
                BackendError::transient(msg)
            } else {
                BackendError::permanent(msg)
            }
        }
        ureq::Error::Transport(t) => match t.kind() {
            ureq::ErrorKind::ConnectionFailed | ureq::ErrorKind::Dns => BackendError::unreachable(t.to_string()),
            ureq::ErrorKind::InvalidUrl | ureq::ErrorKind::UnknownScheme => BackendError::permanent(t.to_string()),
            _ => BackendError::transient(t.to_string()),
        },
    }
}

pub(crate) fn completion_text(body: &Value) -> Option<String> {
    let choice = body.get("choices")?.get(0)?;
    choice
        .get("text")
        .and_then(Value::as_str)
        .or_else(|| choice.get("message")?.get("content")?.as_str())
        .map(str::to_string)
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, request: &CompletionRequest<'_>, config: &BackendConfig) -> Result<String, BackendError> {
        let fallback;
        let agent = match &self.agent {
            Some(a) => a,
            None => {
                fallback = ureq::AgentBuilder::new().timeout(config.request_timeout()).build();
                &fallback
            }
        };
        let mut req = agent.post(&config.endpoint_url).set("Content-Type", "application/json");
        if let Some(key) = &config.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let payload = json!({
            "model": config.model_name,
            "prompt": request.prompt,
            "temperature": config.temperature,
            "max_tokens": config.max_tokens,
        });
        let resp = req.send_json(payload).map_err(classify)?;
        let body: Value = resp.into_json().map_err(|e| BackendError::transient(format!("unreadable response: {e}")))?;
        completion_text(&body).ok_or_else(|| BackendError::permanent("response has no choices[0].text"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt_kit::ChatFamily;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;
    use std::thread;

    /// Serve the given `(status, body)` replies in order, one per connection,
    /// and forward each request body to the returned channel.
    fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/completions", listener.local_addr().unwrap());
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                tx.send(String::from_utf8(buf).unwrap()).unwrap();
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (url, rx)
    }

    fn request() -> CompletionRequest<'static> {
        CompletionRequest { tweet_id: "1", tweet_text: "t", family: ChatFamily::Llama2Chat, prompt: "PROMPT" }
    }

    #[test]
    fn posts_payload_and_reads_text() {
        let (url, rx) = serve(vec![(200, r#"{"choices":[{"text":" {\"party\": \"AAP\"}"}]}"#.into())]);
        let cfg = BackendConfig { endpoint_url: url, model_name: "m".into(), ..Default::default() };
        let out = HttpBackend::new(&cfg).complete(&request(), &cfg).unwrap();
        assert_eq!(out, " {\"party\": \"AAP\"}");
        let sent: Value = serde_json::from_str(&rx.recv().unwrap()).unwrap();
        assert_eq!(sent["model"], "m");
        assert_eq!(sent["prompt"], "PROMPT");
        assert_eq!(sent["temperature"], 0.0);
        assert_eq!(sent["max_tokens"], 256);
    }

    #[test]
    fn status_codes_are_classified() {
        let (url, _rx) = serve(vec![(503, "{}".into()), (400, "{}".into())]);
        let cfg = BackendConfig { endpoint_url: url, ..Default::default() };
        let b = HttpBackend::new(&cfg);
        assert_eq!(b.complete(&request(), &cfg).unwrap_err().kind, super::super::ErrorKind::Transient);
        assert_eq!(b.complete(&request(), &cfg).unwrap_err().kind, super::super::ErrorKind::Permanent);
    }

    #[test]
    fn refused_connection_is_unreachable() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let cfg = BackendConfig { endpoint_url: format!("http://127.0.0.1:{port}/v1/completions"), ..Default::default() };
        let err = HttpBackend::new(&cfg).complete(&request(), &cfg).unwrap_err();
        assert_eq!(err.kind, super::super::ErrorKind::Unreachable);
    }

    #[test]
    fn chat_shaped_response() {
        let body: Value = serde_json::from_str(r#"{"choices":[{"message":{"content":"x"}}]}"#).unwrap();
        assert_eq!(completion_text(&body).as_deref(), Some("x"));
        assert_eq!(completion_text(&json!({"choices": []})), None);
    }
}
