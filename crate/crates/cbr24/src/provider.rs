//! Answer providers: a remote OpenAI-compatible chat endpoint and three
//! deterministic mocks used by the evaluation harness. Providers see only
//! the prompt text, exactly like a real model would.

use crate::domain::{pair_expr, solve_general, Puzzle};
use crate::query::{tip_admits_solution, PromptBundle, Tip};
use regex::Regex;
use serde::Deserialize;
use serde_json::json;
use std::sync::OnceLock;
use std::time::Duration;
use thiserror::Error;

#[derive(Error, Debug)]
pub enum ProviderError {
    #[error("provider unavailable after {attempts} attempts: {reason}")]
    Unavailable { attempts: u32, reason: String },
    #[error("unusable provider response: {0}")]
    BadResponse(String),
}

pub trait Provider: Send + Sync {
    fn name(&self) -> &str;
    fn generate(&self, bundle: &PromptBundle) -> Result<String, ProviderError>;
}

/// Pull the puzzle line out of the question block.
fn puzzle_from_prompt(user: &str) -> Option<Puzzle> {
    let mut lines = user.lines();
    while let Some(line) = lines.next() {
        if line.trim_end().starts_with("Solve the following Math-24 puzzle:") {
            return lines.next()?.parse().ok();
        }
    }
    None
}

/// Reconstruct the tips from the context block text.
fn tips_from_prompt(user: &str) -> Vec<Tip> {
    static RE_A: OnceLock<Regex> = OnceLock::new();
    static RE_B: OnceLock<Regex> = OnceLock::new();
    let re_a = RE_A.get_or_init(|| {
        Regex::new(r"^a\) use the pair \((\d+), (\d+)\) to make (\d+)\.").expect("valid regex")
    });
    let re_b = RE_B
        .get_or_init(|| Regex::new(r"^b\) then use the remaining pair to make (\d+)$").expect("valid regex"));
    let mut tips = Vec::new();
    let mut lines = user.lines().peekable();
    while let Some(line) = lines.next() {
        let Some(ca) = re_a.captures(line) else {
            continue;
        };
        let Some(cb) = lines.peek().and_then(|l| re_b.captures(l)) else {
            continue;
        };
        tips.push(Tip {
            pair: (ca[1].parse().unwrap(), ca[2].parse().unwrap()),
            large: ca[3].parse().unwrap(),
            small: cb[1].parse().unwrap(),
        });
    }
    tips
}

/// Never finds an answer. Its responses carry no final-answer line at all.
pub struct NullProvider;

impl Provider for NullProvider {
    fn name(&self) -> &str {
        "null"
    }

    fn generate(&self, _bundle: &PromptBundle) -> Result<String, ProviderError> {
        Ok("I could not find a way to make 24 with these numbers.".to_string())
    }
}

/// Solves every solvable puzzle with the general brute-force solver.
pub struct OracleProvider;

impl Provider for OracleProvider {
    fn name(&self) -> &str {
        "oracle"
    }

    fn generate(&self, bundle: &PromptBundle) -> Result<String, ProviderError> {
        let Some(puzzle) = puzzle_from_prompt(&bundle.user) else {
            return Err(ProviderError::BadResponse(
                "prompt carries no puzzle line".to_string(),
            ));
        };
        match solve_general(&puzzle).into_iter().next() {
            Some(expr) => Ok(format!(
                "The numbers allow an exact construction.\nFinal Answer: {} = 24",
                expr
            )),
            None => Ok("This puzzle has no solution.".to_string()),
        }
    }
}

/// Executes the first workable tip from the context, exactly as written:
/// make the large value from some pair, the small value from the remainder,
/// and multiply. With no workable tip it answers with a deliberately wrong
/// expression, so its correctness tracks tip quality precisely.
pub struct TipFollowerProvider;

impl TipFollowerProvider {
    fn follow(puzzle: &Puzzle, tip: &Tip) -> Option<String> {
        let n = puzzle.numbers();
        let mut pairs: Vec<(usize, usize)> = (0..4)
            .flat_map(|i| ((i + 1)..4).map(move |j| (i, j)))
            .collect();
        // try the suggested numbers first, then the fallback pairs
        pairs.sort_by_key(|&(i, j)| {
            let mut vals = [n[i], n[j]];
            vals.sort_unstable();
            let mut suggested = [tip.pair.0, tip.pair.1];
            suggested.sort_unstable();
            vals != suggested
        });
        for (i, j) in pairs {
            let mut rest = (0..4).filter(|&p| p != i && p != j);
            let (k, l) = (rest.next().unwrap(), rest.next().unwrap());
            let Some((la, lop, lb)) = pair_expr(n[i], n[j], tip.large) else {
                continue;
            };
            let Some((sa, sop, sb)) = pair_expr(n[k], n[l], tip.small) else {
                continue;
            };
            return Some(format!(
                "({} {} {}) * ({} {} {})",
                la,
                lop.symbol(),
                lb,
                sa,
                sop.symbol(),
                sb
            ));
        }
        None
    }

    fn wrong_answer(puzzle: &Puzzle) -> String {
        let n = puzzle.numbers();
        let sum: i64 = n.iter().sum();
        // the sum and the product of four numbers from 1..=13 are never
        // both 24, so one of these is always wrong
        if sum != 24 {
            format!("{} + {} + {} + {}", n[0], n[1], n[2], n[3])
        } else {
            format!("{} * {} * {} * {}", n[0], n[1], n[2], n[3])
        }
    }
}

impl Provider for TipFollowerProvider {
    fn name(&self) -> &str {
        "tip-follower"
    }

    fn generate(&self, bundle: &PromptBundle) -> Result<String, ProviderError> {
        let Some(puzzle) = puzzle_from_prompt(&bundle.user) else {
            return Err(ProviderError::BadResponse(
                "prompt carries no puzzle line".to_string(),
            ));
        };
        let tips = tips_from_prompt(&bundle.user);
        for tip in &tips {
            if let Some(expr) = Self::follow(&puzzle, tip) {
                return Ok(format!(
                    "Following the tip for {} * {}.\nFinal Answer: {} = 24",
                    tip.large, tip.small, expr
                ));
            }
        }
        Ok(format!(
            "None of the tips work; guessing.\nFinal Answer: {} = 24",
            Self::wrong_answer(&puzzle)
        ))
    }
}

/// Sanity check used by tests and the harness: the tip follower answers
/// correctly exactly when some tip admits a solution.
pub fn any_tip_admissible(puzzle: &Puzzle, tips: &[Tip]) -> bool {
    tips.iter().any(|t| tip_admits_solution(puzzle, t))
}

#[derive(Debug, Clone, Deserialize)]
pub struct RemoteConfig {
    /// Full chat-completions URL, e.g. http://host:port/v1/chat/completions
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key. Empty means
    /// no Authorization header. The key itself never appears in config.
    pub api_key_env: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub retries: u32,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: String::new(),
            model: String::new(),
            api_key_env: String::new(),
            temperature: 0.0,
            timeout_secs: 60,
            retries: 3,
        }
    }
}

/// OpenAI-compatible chat-completions client with bounded retries and
/// exponential backoff.
pub struct RemoteProvider {
    cfg: RemoteConfig,
    client: reqwest::blocking::Client,
}

impl RemoteProvider {
    pub fn new(cfg: RemoteConfig) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Unavailable {
                attempts: 0,
                reason: e.to_string(),
            })?;
        Ok(RemoteProvider { cfg, client })
    }

    fn attempt(&self, bundle: &PromptBundle) -> Result<String, String> {
        let body = json!({
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "messages": [
                {"role": "system", "content": bundle.system},
                {"role": "user", "content": bundle.user},
            ],
        });
        let mut req = self.client.post(&self.cfg.endpoint).json(&body);
        if !self.cfg.api_key_env.is_empty() {
            if let Ok(key) = std::env::var(&self.cfg.api_key_env) {
                req = req.bearer_auth(key);
            }
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("http status {}", status));
        }
        let value: serde_json::Value = resp.json().map_err(|e| e.to_string())?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(|s| s.to_string())
            .ok_or_else(|| "response carries no choices[0].message.content".to_string())
    }
}

impl Provider for RemoteProvider {
    fn name(&self) -> &str {
        "remote"
    }

    fn generate(&self, bundle: &PromptBundle) -> Result<String, ProviderError> {
        let attempts = self.cfg.retries.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(500 << (attempt - 1)));
            }
            match self.attempt(bundle) {
                Ok(text) => return Ok(text),
                Err(reason) => last = reason,
            }
        }
        Err(ProviderError::Unavailable {
            attempts,
            reason: last,
        })
    }
}
