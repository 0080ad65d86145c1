//! Command-line client for the platform API.
//!
//! Exit codes: 0 on success, 1 when the API fails or cannot be reached, 2 on
//! a usage error. `--json` prints the API reply unchanged (pretty-printed);
//! the only client-side state is the token file.

pub mod args;
pub mod client;
pub mod commands;

use std::ffi::OsString;
use std::io::{Read, Write};

use clap::Parser;

use crate::args::{Cli, Command};
use crate::client::{Api, CliError, EXIT_OK, EXIT_USAGE};
use crate::commands::{execute, render, resolve_token, Ctx, Output};

/// Parses `argv` (program name first) and runs one command.
pub fn run<I, T>(argv: I, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(stdout, "{text}");
                EXIT_OK
            };
        }
    };
    match dispatch(&cli, stdin, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli, stdin: &mut dyn Read, stdout: &mut dyn Write) -> Result<(), CliError> {
    // Login brings its own token; a stale or loose token file must not block it.
    let token = match cli.command {
        Command::Login(_) => None,
        _ => resolve_token(cli)?,
    };
    let api = Api::new(&cli.api_url, token)?;
    let mut ctx = Ctx { cli, api, stdin, stdout };
    let output = execute(&mut ctx)?;
    let out = ctx.stdout;
    let write_err = |e: std::io::Error| CliError::Local(format!("writing output: {e}"));
    match output {
        Output::Streamed => Ok(()),
        Output::Value(v) if cli.json => {
            writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("values serialize")).map_err(write_err)
        }
        Output::Value(v) => {
            let text = render(&v);
            if text.is_empty() {
                Ok(())
            } else {
                writeln!(out, "{text}").map_err(write_err)
            }
        }
        Output::Text(t) if cli.json => writeln!(out, "{}", serde_json::Value::String(t)).map_err(write_err),
        Output::Text(t) => write!(out, "{t}").map_err(write_err),
        Output::Bytes { reply, .. } if cli.json => {
            writeln!(out, "{}", serde_json::to_string_pretty(&reply).expect("values serialize")).map_err(write_err)
        }
        Output::Bytes { raw, .. } => out.write_all(&raw).map_err(write_err),
        Output::Done(_) if cli.json => writeln!(out, "null").map_err(write_err),
        Output::Done(msg) => writeln!(out, "{msg}").map_err(write_err),
    }
}
