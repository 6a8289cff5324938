//! Strict RFC 4180 record reader.
//!
//! Accepts LF or CRLF line endings, an optional UTF-8 byte order mark and
//! skips blank lines. A quote may only open a field; inside a quoted field
//! `""` is a literal quote and the field must close before a separator or
//! end of record.

use crate::error::{Error, Result};

/// One parsed record with the 1-based line number it started on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub line: usize,
    pub fields: Vec<String>,
}

pub fn read_records(source: &[u8]) -> Result<Vec<RawRecord>> {
    let text = std::str::from_utf8(source).map_err(|e| {
        let line = 1 + source[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count();
        Error::Parse { line, message: "input is not valid UTF-8".into() }
    })?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);

    let mut records = Vec::new();
    let mut chars = text.chars().peekable();
    let mut line = 1usize;

    while chars.peek().is_some() {
        // blank line
        match chars.peek() {
            Some('\n') => {
                chars.next();
                line += 1;
                continue;
            }
            Some('\r') => {
                let mut look = chars.clone();
                look.next();
                if look.peek() == Some(&'\n') {
                    chars.next();
                    chars.next();
                    line += 1;
                    continue;
                }
            }
            _ => {}
        }

        let start_line = line;
        let mut fields = Vec::new();
        let mut field = String::new();
        loop {
            if chars.peek() == Some(&'"') {
                let quote_line = line;
                chars.next();
                loop {
                    match chars.next() {
                        None => {
                            return Err(Error::Parse { line: quote_line, message: "unterminated quoted field".into() })
                        }
                        Some('"') => {
                            if chars.peek() == Some(&'"') {
                                chars.next();
                                field.push('"');
                            } else {
                                break;
                            }
                        }
                        Some(c) => {
                            if c == '\n' {
                                line += 1;
                            }
                            field.push(c);
                        }
                    }
                }
                match chars.peek() {
                    None | Some(',') | Some('\n') | Some('\r') => {}
                    Some(c) => {
                        return Err(Error::Parse {
                            line,
                            message: format!("unexpected character {c:?} after closing quote"),
                        })
                    }
                }
            } else {
                while let Some(&c) = chars.peek() {
                    match c {
                        ',' | '\n' => break,
                        '\r' => {
                            let mut look = chars.clone();
                            look.next();
                            if look.peek() == Some(&'\n') || look.peek().is_none() {
                                break;
                            }
                            return Err(Error::Parse { line, message: "bare carriage return".into() });
                        }
                        '"' => return Err(Error::Parse { line, message: "quote inside unquoted field".into() }),
                        _ => {
                            field.push(c);
                            chars.next();
                        }
                    }
                }
            }

            fields.push(std::mem::take(&mut field));
            match chars.next() {
                Some(',') => continue,
                Some('\r') => {
                    if chars.peek() == Some(&'\n') {
                        chars.next();
                    }
                    line += 1;
                    break;
                }
                Some('\n') => {
                    line += 1;
                    break;
                }
                None => break,
                Some(_) => unreachable!("field loop stops only on separators"),
            }
        }
        records.push(RawRecord { line: start_line, fields });
    }
    Ok(records)
}

/// Quote a field when it would not survive a round trip unquoted.
pub fn write_field(out: &mut String, field: &str) {
    if field.contains([',', '"', '\n', '\r']) {
        out.push('"');
        out.push_str(&field.replace('"', "\"\""));
        out.push('"');
    } else {
        out.push_str(field);
    }
}
