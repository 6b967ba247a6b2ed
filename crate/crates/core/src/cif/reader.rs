//! Tokenizer and data-block model for the CIF subset used by crystal
//! databases: tag/value pairs and loops in one data block.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Token {
    pub text: String,
    pub line: usize,
    pub column: usize,
    /// Quoted strings and text fields are never tags or keywords.
    pub quoted: bool,
}

fn err(line: usize, column: usize, reason: impl Into<String>) -> Error {
    Error::Parse { line, column, reason: reason.into() }
}

pub(crate) fn tokenize(text: &str) -> Result<Vec<Token>> {
    let mut tokens = Vec::new();
    let lines: Vec<&str> = text.lines().collect();
    let mut li = 0;
    while li < lines.len() {
        let line = lines[li];
        // semicolon text field
        if line.starts_with(';') {
            let start = li;
            let mut body = vec![&line[1..]];
            li += 1;
            loop {
                match lines.get(li) {
                    Some(l) if l.starts_with(';') => break,
                    Some(l) => body.push(l),
                    None => return Err(err(start + 1, 1, "unterminated text field")),
                }
                li += 1;
            }
            tokens.push(Token { text: body.join("\n").trim().to_string(), line: start + 1, column: 1, quoted: true });
            li += 1;
            continue;
        }
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() {
                i += 1;
            } else if c == '#' {
                break;
            } else if c == '\'' || c == '"' {
                // a quote closes only when followed by whitespace or line end
                let start = i;
                let mut j = i + 1;
                while j < chars.len() && !(chars[j] == c && chars.get(j + 1).is_none_or(|n| n.is_whitespace())) {
                    j += 1;
                }
                if j >= chars.len() {
                    return Err(err(li + 1, start + 1, "unterminated quoted string"));
                }
                tokens.push(Token { text: chars[i + 1..j].iter().collect(), line: li + 1, column: start + 1, quoted: true });
                i = j + 1;
            } else {
                let start = i;
                while i < chars.len() && !chars[i].is_whitespace() {
                    i += 1;
                }
                tokens.push(Token { text: chars[start..i].iter().collect(), line: li + 1, column: start + 1, quoted: false });
            }
        }
        li += 1;
    }
    Ok(tokens)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub(crate) struct Loop {
    /// Lower-cased tags.
    pub tags: Vec<String>,
    pub rows: Vec<Vec<Token>>,
}

impl Loop {
    pub fn column(&self, tag: &str) -> Option<usize> {
        self.tags.iter().position(|t| t == tag)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub(crate) struct DataBlock {
    pub name: String,
    /// Lower-cased tag with its value.
    pub items: Vec<(String, Token)>,
    pub loops: Vec<Loop>,
}

impl DataBlock {
    pub fn get(&self, tag: &str) -> Option<&Token> {
        self.items.iter().find(|(t, _)| t == tag).map(|(_, v)| v)
    }

    pub fn find_loop(&self, tag: &str) -> Option<&Loop> {
        self.loops.iter().find(|l| l.column(tag).is_some())
    }
}

fn is_keyword(t: &Token, word: &str) -> bool {
    !t.quoted && t.text.get(..word.len()).is_some_and(|p| p.eq_ignore_ascii_case(word))
}

fn is_tag(t: &Token) -> bool {
    !t.quoted && t.text.starts_with('_')
}

/// Parses the first data block; later blocks are ignored with a warning.
pub(crate) fn parse_block(text: &str) -> Result<DataBlock> {
    let tokens = tokenize(text)?;
    let mut block = DataBlock::default();
    let mut seen_data = false;
    let mut i = 0;
    while i < tokens.len() {
        let t = &tokens[i];
        if is_keyword(t, "data_") {
            if seen_data {
                log::warn!("line {}: only the first data block is read", t.line);
                break;
            }
            seen_data = true;
            block.name = t.text[5..].to_string();
            i += 1;
        } else if is_keyword(t, "loop_") {
            i += 1;
            let mut lp = Loop::default();
            while i < tokens.len() && is_tag(&tokens[i]) {
                lp.tags.push(tokens[i].text.to_ascii_lowercase());
                i += 1;
            }
            if lp.tags.is_empty() {
                return Err(err(t.line, t.column, "loop_ without tags"));
            }
            let mut values = Vec::new();
            while i < tokens.len()
                && !is_tag(&tokens[i])
                && !is_keyword(&tokens[i], "loop_")
                && !is_keyword(&tokens[i], "data_")
                && !is_keyword(&tokens[i], "save_")
            {
                values.push(tokens[i].clone());
                i += 1;
            }
            if values.len() % lp.tags.len() != 0 {
                return Err(err(
                    t.line,
                    t.column,
                    format!("loop has {} values for {} tags", values.len(), lp.tags.len()),
                ));
            }
            lp.rows = values.chunks(lp.tags.len()).map(<[Token]>::to_vec).collect();
            block.loops.push(lp);
        } else if is_tag(t) {
            let Some(v) = tokens.get(i + 1).filter(|v| !is_tag(v) && !is_keyword(v, "loop_") && !is_keyword(v, "data_")) else {
                return Err(err(t.line, t.column, format!("tag {} has no value", t.text)));
            };
            block.items.push((t.text.to_ascii_lowercase(), v.clone()));
            i += 2;
        } else if is_keyword(t, "save_") || is_keyword(t, "global_") || is_keyword(t, "stop_") {
            log::warn!("line {}: skipping unsupported `{}`", t.line, t.text);
            i += 1;
        } else {
            return Err(err(t.line, t.column, format!("unexpected value `{}`", t.text)));
        }
    }
    if !seen_data {
        return Err(err(1, 1, "no data_ block"));
    }
    Ok(block)
}

/// Parses a CIF number, dropping a standard-uncertainty suffix like `(3)`.
pub(crate) fn number(t: &Token) -> Result<f64> {
    let s = t.text.trim();
    let s = match s.find('(') {
        Some(p) if s.ends_with(')') && s[p + 1..s.len() - 1].chars().all(|c| c.is_ascii_digit()) => &s[..p],
        _ => s,
    };
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(err(t.line, t.column, format!("expected a number, found `{}`", t.text))),
    }
}
