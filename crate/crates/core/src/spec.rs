//! Small helpers for the `name(arg, ...)` text forms of grids, sigma rules
//! and sampler kinds.

use crate::error::{Error, Result};

/// Splits on `sep` at parenthesis depth zero, trimming each piece.
pub fn split_top_level(s: &str, sep: char) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for ch in s.chars() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            _ => {}
        }
        if ch == sep && depth == 0 {
            out.push(cur.trim().to_string());
            cur.clear();
        } else {
            cur.push(ch);
        }
    }
    if !cur.trim().is_empty() || !out.is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

/// `name(a, b)` -> `("name", ["a", "b"])`; a bare `name` has no arguments.
pub fn split_call(s: &str) -> Result<(String, Vec<String>)> {
    let s = s.trim();
    match s.find('(') {
        None => {
            if s.is_empty() || s.contains(')') {
                return Err(Error::Domain(format!("malformed expression `{s}`")));
            }
            Ok((s.to_string(), Vec::new()))
        }
        Some(open) => {
            if !s.ends_with(')') {
                return Err(Error::Domain(format!("missing `)` in `{s}`")));
            }
            let name = s[..open].trim().to_string();
            let inner = &s[open + 1..s.len() - 1];
            let args = if inner.trim().is_empty() {
                Vec::new()
            } else {
                split_top_level(inner, ',')
            };
            Ok((name, args))
        }
    }
}

pub fn parse_f64(arg: &str, ctx: &str) -> Result<f64> {
    arg.trim()
        .parse::<f64>()
        .map_err(|_| Error::Domain(format!("bad number `{arg}` in `{}`", ctx.trim())))
}

pub fn parse_f64_args<const N: usize>(args: &[String], ctx: &str) -> Result<[f64; N]> {
    if args.len() != N {
        return Err(Error::Domain(format!(
            "expected {N} argument(s) in `{}`, got {}",
            ctx.trim(),
            args.len()
        )));
    }
    let mut out = [0.0; N];
    for (slot, a) in out.iter_mut().zip(args) {
        *slot = parse_f64(a, ctx)?;
    }
    Ok(out)
}
