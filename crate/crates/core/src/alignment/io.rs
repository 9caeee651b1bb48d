//! Alignment link files: one line per sentence pair, whitespace-separated
//! links, `i-j` for sure and `i?j` for possible (0-indexed source-target word
//! indices). A blank line is a pair with no links.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use super::{Alignment, GoldAlignment, Link};
use crate::error::{Error, Result};

fn parse_link(tok: &str) -> Option<(Link, bool)> {
    let (sep, sure) = if tok.contains('-') {
        ('-', true)
    } else if tok.contains('?') {
        ('?', false)
    } else {
        return None;
    };
    let (a, b) = tok.split_once(sep)?;
    Some(((a.parse().ok()?, b.parse().ok()?), sure))
}

pub fn parse_line(line: &str) -> std::result::Result<GoldAlignment, String> {
    let mut sure = BTreeSet::new();
    let mut possible = BTreeSet::new();
    for tok in line.split_whitespace() {
        let (link, is_sure) = parse_link(tok).ok_or_else(|| format!("bad link {tok:?}"))?;
        if is_sure {
            sure.insert(link);
        } else {
            possible.insert(link);
        }
    }
    Ok(GoldAlignment::new(sure, possible))
}

pub fn read_links<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<GoldAlignment>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        out.push(parse_line(&line).map_err(|detail| Error::Parse {
            source_name: source_name.to_string(),
            line: n + 1,
            detail,
        })?);
    }
    Ok(out)
}

/// A predicted file is read as plain links: sure and possible marks alike.
pub fn read_predicted<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<Alignment>> {
    Ok(read_links(reader, source_name)?
        .into_iter()
        .map(|g| Alignment { links: g.possible })
        .collect())
}

pub fn format_alignment(a: &Alignment) -> String {
    a.links
        .iter()
        .map(|(i, j)| format!("{i}-{j}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_alignments<W: Write>(mut w: W, alignments: &[Alignment]) -> Result<()> {
    for a in alignments {
        writeln!(w, "{}", format_alignment(a))?;
    }
    w.flush()?;
    Ok(())
}
