//! External feature extractors reached over HTTP (`POST /extract`) or over
//! a child process speaking one JSON document per line.
//!
//! Both transports carry the same schema:
//!
//! ```text
//! request  {"text": "<unit>"}
//! response {"dim": 16384, "tokens": ["..."], "rows": [{"indices": [..], "values": [..]}]}
//! error    {"error": "<message>"}
//! ```

use std::io::{self, BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use featuremark_core::units::tokenize;
use featuremark_core::{ActivationMatrix, FeatureError, FeatureExtractor, SparseRow};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRow {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractResponse {
    pub dim: usize,
    pub tokens: Vec<String>,
    pub rows: Vec<WireRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

/// `GET /healthz` payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub dim: usize,
    pub sae_id: String,
    pub anchor_model_id: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Reply {
    Ok(ExtractResponse),
    Err(ErrorBody),
}

impl ExtractResponse {
    pub fn from_matrix(acts: &ActivationMatrix, tokens: Vec<String>) -> Self {
        ExtractResponse {
            dim: acts.dim(),
            tokens,
            rows: acts
                .rows()
                .iter()
                .map(|r| WireRow {
                    indices: r.indices().to_vec(),
                    values: r.values().to_vec(),
                })
                .collect(),
        }
    }

    /// Validate against the schema and convert.
    pub fn into_matrix(self, expected_dim: usize) -> Result<ActivationMatrix, FeatureError> {
        if self.dim != expected_dim {
            return Err(FeatureError::Extractor(format!(
                "extractor reported dim {}, expected {expected_dim}",
                self.dim
            )));
        }
        if self.tokens.len() != self.rows.len() {
            return Err(FeatureError::Extractor(format!(
                "{} tokens but {} rows",
                self.tokens.len(),
                self.rows.len()
            )));
        }
        let rows = self
            .rows
            .into_iter()
            .enumerate()
            .map(|(row, r)| {
                SparseRow::new(r.indices, r.values)
                    .map_err(|reason| FeatureError::MalformedRow { row, reason })
            })
            .collect::<Result<Vec<_>, _>>()?;
        ActivationMatrix::new(self.dim, rows)
    }
}

fn parse_reply(body: &str, dim: usize) -> Result<ActivationMatrix, FeatureError> {
    match serde_json::from_str::<Reply>(body) {
        Ok(Reply::Ok(resp)) => resp.into_matrix(dim),
        Ok(Reply::Err(e)) => Err(FeatureError::Extractor(e.error)),
        Err(e) => Err(FeatureError::Extractor(format!("unparseable reply: {e}"))),
    }
}

/// Answer JSON-lines extraction requests with a local extractor until EOF.
/// This is the reference implementation of the stdio transport.
pub fn serve_jsonl<E: FeatureExtractor + ?Sized>(
    extractor: &E,
    input: impl BufRead,
    mut output: impl Write,
) -> io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<ExtractRequest>(&line) {
            Ok(req) => match extractor.extract(&req.text) {
                Ok(acts) => {
                    let tokens = tokenize(&req.text).into_iter().map(String::from).collect();
                    serde_json::to_string(&ExtractResponse::from_matrix(&acts, tokens))
                }
                Err(e) => serde_json::to_string(&ErrorBody { error: e.to_string() }),
            },
            Err(e) => serde_json::to_string(&ErrorBody {
                error: format!("bad request: {e}"),
            }),
        }
        .map_err(io::Error::other)?;
        writeln!(output, "{reply}")?;
        output.flush()?;
    }
    Ok(())
}

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

/// Client for an HTTP extraction service.
#[derive(Debug)]
pub struct HttpExtractor {
    agent: ureq::Agent,
    base: String,
    id: String,
    dim: usize,
}

impl HttpExtractor {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

    /// `id` is what calibration models get bound to; pick something that
    /// changes whenever the served weights change.
    pub fn new(base_url: &str, id: impl Into<String>, dim: usize) -> Self {
        HttpExtractor {
            agent: agent(Self::DEFAULT_TIMEOUT),
            base: base_url.trim_end_matches('/').to_string(),
            id: id.into(),
            dim,
        }
    }

    /// Ask `/healthz` for the dimension and derive the id from the served
    /// model names.
    pub fn connect(base_url: &str) -> Result<Self, FeatureError> {
        let base = base_url.trim_end_matches('/');
        let a = agent(Self::DEFAULT_TIMEOUT);
        let mut resp = a
            .get(format!("{base}/healthz"))
            .call()
            .map_err(|e| FeatureError::Extractor(e.to_string()))?;
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| FeatureError::Extractor(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(FeatureError::Extractor(format!(
                "healthz returned {}: {body}",
                resp.status()
            )));
        }
        let h: Health = serde_json::from_str(&body)
            .map_err(|e| FeatureError::Extractor(format!("bad healthz reply: {e}")))?;
        let id = format!("sae/{}/{}/dim{}", h.anchor_model_id, h.sae_id, h.dim);
        Ok(HttpExtractor {
            agent: a,
            base: base.to_string(),
            id,
            dim: h.dim,
        })
    }
}

impl FeatureExtractor for HttpExtractor {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn extract(&self, unit_text: &str) -> Result<ActivationMatrix, FeatureError> {
        let req = ExtractRequest {
            text: unit_text.to_string(),
        };
        let mut resp = self
            .agent
            .post(format!("{}/extract", self.base))
            .send_json(&req)
            .map_err(|e| FeatureError::Extractor(e.to_string()))?;
        let status = resp.status();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| FeatureError::Extractor(e.to_string()))?;
        if !status.is_success() {
            let msg = serde_json::from_str::<ErrorBody>(&body).map_or(body, |e| e.error);
            return Err(FeatureError::Extractor(format!("HTTP {status}: {msg}")));
        }
        parse_reply(&body, self.dim)
    }
}

struct Pipe {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Extractor running as a child process on the JSON-lines transport.
/// Requests are serialized through one pipe.
pub struct StdioExtractor {
    pipe: Mutex<Pipe>,
    id: String,
    dim: usize,
}

impl std::fmt::Debug for StdioExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StdioExtractor")
            .field("id", &self.id)
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

impl StdioExtractor {
    pub fn spawn(mut command: Command, id: impl Into<String>, dim: usize) -> io::Result<Self> {
        let mut child = command
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(StdioExtractor {
            pipe: Mutex::new(Pipe {
                child,
                stdin,
                stdout,
            }),
            id: id.into(),
            dim,
        })
    }
}

impl FeatureExtractor for StdioExtractor {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn extract(&self, unit_text: &str) -> Result<ActivationMatrix, FeatureError> {
        let io_err = |e: io::Error| FeatureError::Extractor(format!("extractor pipe: {e}"));
        let req = serde_json::to_string(&ExtractRequest {
            text: unit_text.to_string(),
        })
        .expect("request serializes");
        let mut pipe = self.pipe.lock().unwrap_or_else(|p| p.into_inner());
        writeln!(pipe.stdin, "{req}").map_err(io_err)?;
        pipe.stdin.flush().map_err(io_err)?;
        let mut line = String::new();
        if pipe.stdout.read_line(&mut line).map_err(io_err)? == 0 {
            return Err(FeatureError::Extractor("extractor process closed its output".into()));
        }
        parse_reply(&line, self.dim)
    }

    fn supports_concurrency(&self) -> bool {
        false
    }
}

impl Drop for StdioExtractor {
    fn drop(&mut self) {
        let pipe = self.pipe.get_mut().unwrap_or_else(|p| p.into_inner());
        let _ = pipe.child.kill();
        let _ = pipe.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use featuremark_core::{BuiltinConfig, BuiltinExtractor};

    #[test]
    fn response_validation() {
        let ok = r#"{"dim":8,"tokens":["a","b"],"rows":[{"indices":[1,3],"values":[0.5,1.0]},{"indices":[7],"values":[2.0]}]}"#;
        let m = parse_reply(ok, 8).unwrap();
        assert_eq!(m.token_count(), 2);
        assert_eq!(m.rows()[1].get(7), Some(2.0));

        assert!(matches!(parse_reply(ok, 16), Err(FeatureError::Extractor(_))));
        let descending = r#"{"dim":8,"tokens":["a"],"rows":[{"indices":[3,1],"values":[0.5,1.0]}]}"#;
        assert!(matches!(
            parse_reply(descending, 8),
            Err(FeatureError::MalformedRow { row: 0, .. })
        ));
        let negative = r#"{"dim":8,"tokens":["a"],"rows":[{"indices":[1],"values":[-1.0]}]}"#;
        assert!(matches!(parse_reply(negative, 8), Err(FeatureError::MalformedRow { .. })));
        let out_of_range = r#"{"dim":8,"tokens":["a"],"rows":[{"indices":[8],"values":[1.0]}]}"#;
        assert!(matches!(parse_reply(out_of_range, 8), Err(FeatureError::MalformedRow { .. })));
        let count = r#"{"dim":8,"tokens":["a","b"],"rows":[]}"#;
        assert!(matches!(parse_reply(count, 8), Err(FeatureError::Extractor(_))));
        assert_eq!(
            parse_reply(r#"{"error":"out of memory"}"#, 8),
            Err(FeatureError::Extractor("out of memory".into()))
        );
    }

    #[test]
    fn jsonl_server_roundtrips_builtin() {
        let ex = BuiltinExtractor::new(BuiltinConfig::default()).unwrap();
        let input = "{\"text\":\"the quick fox\"}\n\n{\"text\":\"\"}\nnot json\n";
        let mut out = Vec::new();
        serve_jsonl(&ex, input.as_bytes(), &mut out).unwrap();
        let lines: Vec<&str> = std::str::from_utf8(&out).unwrap().lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(parse_reply(lines[0], 1024).unwrap(), ex.extract("the quick fox").unwrap());
        let resp: ExtractResponse = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(resp.tokens, ["the", "quick", "fox"]);
        assert!(serde_json::from_str::<ErrorBody>(lines[1]).is_ok());
        assert!(serde_json::from_str::<ErrorBody>(lines[2]).unwrap().error.starts_with("bad request"));
    }
}
