//! Source normalisation for C++ solutions: include removal, a small
//! macro expander and comment stripping.
//!
//! The expander handles object-like and function-like `#define`s,
//! `#undef`, and drops conditional-compilation directives while keeping
//! the text of every branch. Token pasting, stringizing and predefined
//! macros are not supported.

use std::collections::HashMap;

use log::warn;

pub const DEFAULT_MACRO_DEPTH: usize = 16;

fn directive_name(line: &str) -> Option<&str> {
    let rest = line.trim_start().strip_prefix('#')?;
    let rest = rest.trim_start();
    let end = rest
        .find(|c: char| !c.is_ascii_alphanumeric() && c != '_')
        .unwrap_or(rest.len());
    Some(&rest[..end])
}

/// Removes every line whose first token is `#include`.
pub fn strip_includes(source: &str) -> String {
    source
        .split_inclusive('\n')
        .filter(|line| directive_name(line) != Some("include"))
        .collect()
}

/// Replaces `//` and `/* */` comments with a single space, leaving
/// string and character literals untouched.
pub fn strip_comments(source: &str) -> String {
    let bytes = source.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'"' | b'\'' => {
                let end = literal_end(bytes, i);
                out.extend_from_slice(&bytes[i..end]);
                i = end;
            }
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                let end = bytes[i..]
                    .iter()
                    .position(|&b| b == b'\n')
                    .map_or(bytes.len(), |p| i + p);
                out.push(b' ');
                i = end;
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                match source[i + 2..].find("*/") {
                    Some(p) => i = i + 2 + p + 2,
                    None => {
                        warn!("unterminated block comment; stripped to end of file");
                        i = bytes.len();
                    }
                }
                out.push(b' ');
            }
            b => {
                out.push(b);
                i += 1;
            }
        }
    }
    String::from_utf8(out).expect("only ASCII bytes were replaced")
}

/// End (exclusive) of the string or character literal starting at
/// `start`. Unterminated literals run to the end of the line.
fn literal_end(bytes: &[u8], start: usize) -> usize {
    let quote = bytes[start];
    let mut i = start + 1;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b'\n' => return i,
            b if b == quote => return i + 1,
            _ => i += 1,
        }
    }
    bytes.len()
}

#[derive(Debug, Clone)]
struct Macro {
    params: Option<Vec<String>>,
    body: String,
}

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_'
}

fn is_ident(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

fn parse_define(text: &str) -> Option<(String, Macro)> {
    let rest = text.trim_start().strip_prefix('#')?.trim_start();
    let rest = rest.strip_prefix("define")?;
    let rest = rest.trim_start();
    let bytes = rest.as_bytes();
    if bytes.is_empty() || !is_ident_start(bytes[0]) {
        return None;
    }
    let end = bytes.iter().position(|&b| !is_ident(b)).unwrap_or(bytes.len());
    let name = rest[..end].to_string();
    let after = &rest[end..];
    if let Some(params_text) = after.strip_prefix('(') {
        let close = params_text.find(')')?;
        let params = params_text[..close]
            .split(',')
            .map(|p| p.trim().to_string())
            .filter(|p| !p.is_empty())
            .collect();
        let body = params_text[close + 1..].trim().to_string();
        Some((
            name,
            Macro {
                params: Some(params),
                body,
            },
        ))
    } else {
        Some((
            name,
            Macro {
                params: None,
                body: after.trim().to_string(),
            },
        ))
    }
}

/// Splits `source` into logical lines, joining backslash continuations,
/// returning `(logical_text, raw_text)` pairs.
fn logical_lines(source: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut logical = String::new();
    let mut raw = String::new();
    for line in source.split_inclusive('\n') {
        raw.push_str(line);
        let content = line.strip_suffix('\n').unwrap_or(line);
        let content = content.strip_suffix('\r').unwrap_or(content);
        if let Some(cont) = content.strip_suffix('\\') {
            logical.push_str(cont);
            logical.push(' ');
            continue;
        }
        logical.push_str(content);
        out.push((std::mem::take(&mut logical), std::mem::take(&mut raw)));
    }
    if !raw.is_empty() {
        out.push((logical, raw));
    }
    out
}

const CONDITIONALS: &[&str] = &["if", "ifdef", "ifndef", "elif", "else", "endif"];

/// Collects `#define`s and substitutes their uses, removing `#define`,
/// `#undef` and conditional directive lines.
pub fn expand_macros(source: &str, max_depth: usize) -> String {
    let mut table: HashMap<String, Macro> = HashMap::new();
    let mut out = String::with_capacity(source.len());
    let mut chunk = String::new();
    for (logical, raw) in logical_lines(source) {
        let directive = directive_name(&logical);
        let is_macro_line = match directive {
            Some("define") | Some("undef") => true,
            Some(d) => CONDITIONALS.contains(&d),
            None => false,
        };
        if !is_macro_line {
            chunk.push_str(&raw);
            continue;
        }
        out.push_str(&Expander::new(&table, max_depth).expand(&chunk, 0));
        chunk.clear();
        match directive {
            Some("define") => {
                if let Some((name, m)) = parse_define(&logical) {
                    table.insert(name, m);
                }
            }
            Some("undef") => {
                let name = logical
                    .trim_start()
                    .trim_start_matches('#')
                    .trim_start()
                    .trim_start_matches("undef")
                    .trim();
                table.remove(name);
            }
            _ => {}
        }
    }
    out.push_str(&Expander::new(&table, max_depth).expand(&chunk, 0));
    out
}

struct Expander<'a> {
    table: &'a HashMap<String, Macro>,
    max_depth: usize,
}

impl<'a> Expander<'a> {
    fn new(table: &'a HashMap<String, Macro>, max_depth: usize) -> Self {
        Self { table, max_depth }
    }

    fn expand(&self, text: &str, depth: usize) -> String {
        if self.table.is_empty() {
            return text.to_string();
        }
        let bytes = text.as_bytes();
        let mut out = String::with_capacity(text.len());
        let mut i = 0;
        let mut copied = 0;
        while i < bytes.len() {
            let b = bytes[i];
            if b == b'"' || b == b'\'' {
                i = literal_end(bytes, i);
                continue;
            }
            if !is_ident_start(b) || (i > 0 && is_ident(bytes[i - 1])) {
                i += 1;
                continue;
            }
            let end = i + bytes[i..].iter().position(|&c| !is_ident(c)).unwrap_or(bytes.len() - i);
            let name = &text[i..end];
            let Some(m) = self.table.get(name) else {
                i = end;
                continue;
            };
            if depth >= self.max_depth {
                i = end;
                continue;
            }
            match &m.params {
                None => {
                    out.push_str(&text[copied..i]);
                    out.push_str(&self.expand(&m.body, depth + 1));
                    i = end;
                    copied = end;
                }
                Some(params) => {
                    let mut j = end;
                    while j < bytes.len() && bytes[j].is_ascii_whitespace() {
                        j += 1;
                    }
                    if bytes.get(j) != Some(&b'(') {
                        i = end;
                        continue;
                    }
                    match split_arguments(text, j) {
                        Some((args, close)) => {
                            let body = substitute(&m.body, params, &args);
                            out.push_str(&text[copied..i]);
                            out.push_str(&self.expand(&body, depth + 1));
                            i = close;
                            copied = close;
                        }
                        None => {
                            warn!("unterminated invocation of macro `{name}`; left unexpanded");
                            i = end;
                        }
                    }
                }
            }
        }
        out.push_str(&text[copied..]);
        out
    }
}

/// Parses a parenthesised, comma-separated argument list starting at the
/// `(` at `open`. Returns the trimmed arguments and the index just past
/// the closing parenthesis, or `None` if the parentheses never balance.
fn split_arguments(text: &str, open: usize) -> Option<(Vec<String>, usize)> {
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut args = Vec::new();
    let mut start = open + 1;
    let mut i = open;
    while i < bytes.len() {
        match bytes[i] {
            b'"' | b'\'' => {
                i = literal_end(bytes, i);
                continue;
            }
            b'(' | b'[' | b'{' => depth += 1,
            b')' | b']' | b'}' => {
                depth -= 1;
                if depth == 0 {
                    args.push(text[start..i].trim().to_string());
                    return Some((args, i + 1));
                }
            }
            b',' if depth == 1 => {
                args.push(text[start..i].trim().to_string());
                start = i + 1;
            }
            _ => {}
        }
        i += 1;
    }
    None
}

fn substitute(body: &str, params: &[String], args: &[String]) -> String {
    let variadic = params.last().is_some_and(|p| p == "...");
    let named = if variadic { &params[..params.len() - 1] } else { params };
    let bytes = body.as_bytes();
    let mut out = String::with_capacity(body.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'"' || bytes[i] == b'\'' {
            let end = literal_end(bytes, i);
            out.push_str(&body[i..end]);
            i = end;
            continue;
        }
        if is_ident_start(bytes[i]) && (i == 0 || !is_ident(bytes[i - 1])) {
            let end = i + bytes[i..].iter().position(|&c| !is_ident(c)).unwrap_or(bytes.len() - i);
            let word = &body[i..end];
            if let Some(k) = named.iter().position(|p| p == word) {
                out.push_str(args.get(k).map_or("", String::as_str));
            } else if variadic && word == "__VA_ARGS__" {
                out.push_str(&args.get(named.len()..).unwrap_or(&[]).join(", "));
            } else {
                out.push_str(word);
            }
            i = end;
            continue;
        }
        let ch = body[i..].chars().next().expect("in bounds");
        out.push(ch);
        i += ch.len_utf8();
    }
    out
}

/// The full solution normalisation: includes, then macros, then comments.
pub fn preprocess_source(source: &str) -> String {
    strip_comments(&expand_macros(&strip_includes(source), DEFAULT_MACRO_DEPTH))
}
