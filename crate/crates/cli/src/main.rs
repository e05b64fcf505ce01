//! `pricing`: validate, diff and evaluate pricing documents, issue and
//! verify feature tokens, and run the HTTP service.
//!
//! Exit codes: 0 success, 1 a negative finding (violations, a diff that
//! degrades existing subscriptions, a token that does not verify), 2 bad
//! input.

use std::fmt::Display;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pricing_core::expr::ValueMap;
use pricing_core::model::{diff_pricing, parse_pricing, validate_pricing, Pricing, Subscription};
use pricing_core::router::{EvaluationResult, Overlay, PricingSnapshot};
use pricing_core::token::{issue_token, verify_token, TokenKey, DEFAULT_TTL_SECONDS};
use pricing_core::usage::{MemoryStore, UsageTracker};
use pricing_service::ServiceConfig;
use serde_json::json;

#[derive(Parser)]
#[command(name = "pricing", version, about = "Pricing-driven feature toggling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a pricing document.
    Validate {
        file: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Show the changes between two pricing documents.
    Diff {
        old: PathBuf,
        new: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Evaluate every feature for a plan and add-ons.
    Eval {
        file: PathBuf,
        #[command(flatten)]
        sub: SubscriptionArgs,
        #[arg(long)]
        json: bool,
        /// Include `evaluatedAt` in JSON output.
        #[arg(long)]
        with_timestamps: bool,
    },
    /// Issue or verify signed feature tokens.
    Token {
        #[command(subcommand)]
        command: TokenCommand,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum TokenCommand {
    /// Evaluate a subscription and print its signed token.
    Issue {
        file: PathBuf,
        #[command(flatten)]
        sub: SubscriptionArgs,
        #[command(flatten)]
        key: KeyArgs,
        #[arg(long, default_value_t = DEFAULT_TTL_SECONDS)]
        ttl: u64,
        /// Issue time as unix seconds; defaults to now.
        #[arg(long)]
        iat: Option<i64>,
    },
    /// Verify a token; `-` reads it from stdin.
    Verify {
        token: String,
        #[command(flatten)]
        key: KeyArgs,
        /// Verification time as unix seconds; defaults to now.
        #[arg(long)]
        now: Option<i64>,
    },
}

#[derive(Args)]
struct SubscriptionArgs {
    #[arg(long)]
    plan: String,
    /// Comma separated add-on names.
    #[arg(long, value_delimiter = ',')]
    addons: Vec<String>,
    /// JSON object merged under `context.`.
    #[arg(long)]
    context: Option<PathBuf>,
    #[arg(long, default_value = "cli")]
    subscriber: String,
}

#[derive(Args)]
struct KeyArgs {
    /// Environment variable holding the signing key.
    #[arg(long, default_value = "PRICING_TOKEN_KEY")]
    key_env: String,
}

/// Like `println!`, but a closed stdout (`pricing ... | head`) is not fatal.
macro_rules! out {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

/// Failure that maps to exit code 2.
struct InputError(String);

impl<E: Display> From<E> for InputError {
    fn from(e: E) -> Self {
        InputError(e.to_string())
    }
}

type CmdResult = Result<ExitCode, InputError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Validate { file, json } => validate(&file, json),
        Command::Diff { old, new, json } => diff(&old, &new, json),
        Command::Eval {
            file,
            sub,
            json,
            with_timestamps,
        } => eval(&file, &sub, json, with_timestamps),
        Command::Token {
            command: TokenCommand::Issue { file, sub, key, ttl, iat },
        } => token_issue(&file, &sub, &key, ttl, iat),
        Command::Token {
            command: TokenCommand::Verify { token, key, now },
        } => token_verify(&token, &key, now),
        Command::Serve { config } => serve(&config),
    };
    outcome.unwrap_or_else(|InputError(message)| {
        eprintln!("error: {message}");
        ExitCode::from(2)
    })
}

fn read(path: &Path) -> Result<String, InputError> {
    std::fs::read_to_string(path).map_err(|e| InputError(format!("{}: {e}", path.display())))
}

fn load_pricing(path: &Path) -> Result<Pricing, InputError> {
    parse_pricing(&read(path)?).map_err(|e| InputError(format!("{}: {e}", path.display())))
}

fn print_json(value: &serde_json::Value) {
    out!("{}", serde_json::to_string_pretty(value).expect("json values serialize"));
}

fn validate(path: &Path, json: bool) -> CmdResult {
    let text = read(path)?;
    let violations = match parse_pricing(&text) {
        Ok(pricing) => validate_pricing(&pricing),
        Err(e) => {
            if json {
                print_json(&json!({ "valid": false, "parseError": e.to_string(), "violations": [] }));
            } else {
                out!("{}: {e}", path.display());
            }
            return Ok(ExitCode::from(1));
        }
    };
    if json {
        print_json(&json!({ "valid": violations.is_empty(), "violations": violations }));
    } else if violations.is_empty() {
        out!("{}: ok", path.display());
    } else {
        for v in &violations {
            out!("{v}");
        }
        out!("{} violation(s)", violations.len());
    }
    Ok(ExitCode::from(u8::from(!violations.is_empty())))
}

fn diff(old: &Path, new: &Path, json: bool) -> CmdResult {
    let changes = diff_pricing(&load_pricing(old)?, &load_pricing(new)?);
    let max = changes.max_impact();
    if json {
        print_json(&json!({ "changes": changes, "maxImpact": max }));
    } else if changes.is_empty() {
        out!("no changes");
    } else {
        for c in &changes {
            out!("{c}");
        }
    }
    Ok(ExitCode::from(u8::from(changes.degrades_existing())))
}

fn subscription(args: &SubscriptionArgs) -> Subscription {
    Subscription::new(&args.subscriber, &args.plan).with_add_ons(args.addons.iter().filter(|a| !a.is_empty()))
}

fn context(args: &SubscriptionArgs) -> Result<ValueMap, InputError> {
    let Some(path) = &args.context else {
        return Ok(ValueMap::new());
    };
    let json: serde_json::Value =
        serde_json::from_str(&read(path)?).map_err(|e| InputError(format!("{}: {e}", path.display())))?;
    ValueMap::context_from_json(&json).map_err(|e| InputError(format!("{}: {e}", path.display())))
}

/// Evaluates like the service does: counters from a fresh tracker with the
/// supplied context laid on top.
fn evaluate(pricing: Pricing, args: &SubscriptionArgs) -> Result<(EvaluationResult, Subscription), InputError> {
    let overrides = context(args)?;
    let sub = subscription(args);
    let tracker = UsageTracker::new(MemoryStore::new());
    let provider = Overlay {
        base: &tracker,
        overrides: &overrides,
    };
    let result = PricingSnapshot::new(pricing).evaluate_with(&sub, &provider)?;
    Ok((result, sub))
}

fn eval(path: &Path, args: &SubscriptionArgs, json: bool, with_timestamps: bool) -> CmdResult {
    let (result, _) = evaluate(load_pricing(path)?, args)?;
    if json {
        print_json(&result.to_json(with_timestamps));
        return Ok(ExitCode::SUCCESS);
    }
    let width = result.statuses.keys().map(String::len).max().unwrap_or(0);
    for (name, s) in &result.statuses {
        let mut line = format!(
            "{name:<width$}  {:<3}  {:<16}  {}",
            if s.enabled { "on" } else { "off" },
            s.reason.code(),
            s.value
        );
        if let Some(l) = &s.limit {
            line.push_str(&format!("  [{} {}/{}]", l.limit_name, l.used, l.max));
        }
        if let Some(d) = s.reason.detail() {
            line.push_str(&format!("  ({d})"));
        }
        out!("{line}");
    }
    for d in &result.diagnostics {
        eprintln!("warning: {d}");
    }
    Ok(ExitCode::SUCCESS)
}

fn key(args: &KeyArgs) -> Result<TokenKey, InputError> {
    let value = std::env::var(&args.key_env).map_err(|_| InputError(format!("{} is not set", args.key_env)))?;
    Ok(TokenKey::new(value.into_bytes())?)
}

fn token_issue(path: &Path, args: &SubscriptionArgs, key_args: &KeyArgs, ttl: u64, iat: Option<i64>) -> CmdResult {
    let key = key(key_args)?;
    let (result, sub) = evaluate(load_pricing(path)?, args)?;
    let iat = iat.unwrap_or_else(|| chrono::Utc::now().timestamp());
    out!("{}", issue_token(&result, &sub, ttl, &key, iat)?);
    Ok(ExitCode::SUCCESS)
}

fn token_verify(token: &str, key_args: &KeyArgs, now: Option<i64>) -> CmdResult {
    let key = key(key_args)?;
    let token = if token == "-" {
        let mut buf = String::new();
        std::io::stdin().read_to_string(&mut buf)?;
        buf.trim().to_string()
    } else {
        token.to_string()
    };
    let verdict = verify_token(&token, &key, now.unwrap_or_else(|| chrono::Utc::now().timestamp()));
    print_json(&verdict.to_json());
    Ok(ExitCode::from(u8::from(!verdict.is_valid())))
}

fn serve(path: &Path) -> CmdResult {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let config = ServiceConfig::load(path)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(pricing_service::serve(config))?;
    Ok(ExitCode::SUCCESS)
}
