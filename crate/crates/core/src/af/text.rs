//! ICCMA-2023 style text format.
//!
//! ```text
//! # comment
//! p af 3
//! 1 2
//! 2 3
//! ```
//!
//! The `p af <n>` header declares arguments `1..=n`; every following
//! non-comment line `<i> <j>` says that `i` attacks `j`. Blank lines are
//! ignored. Comments and blank lines may also precede the header.

use super::{AfError, ArgumentId, ArgumentationFramework, Extension};

pub fn parse_framework(input: &str) -> Result<ArgumentationFramework, AfError> {
    let mut lines = input
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (header_line, header) = lines.next().ok_or(AfError::Parse {
        line: 1,
        message: "missing `p af <n>` header".into(),
    })?;
    let count = parse_header(header).ok_or_else(|| AfError::Parse {
        line: header_line,
        message: format!("expected `p af <n>`, found `{header}`"),
    })?;

    let mut af = ArgumentationFramework::with_arguments(count);
    for (line, text) in lines {
        let err = |message: String| AfError::Parse { line, message };
        let mut fields = text.split_whitespace();
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(err(format!(
                "expected `<attacker> <target>`, found `{text}`"
            )));
        };
        let attacker = parse_index(a, count).map_err(&err)?;
        let target = parse_index(b, count).map_err(&err)?;
        af.add_attack(attacker, target)
            .map_err(|e| err(e.to_string()))?;
    }
    Ok(af)
}

fn parse_header(line: &str) -> Option<u32> {
    let mut fields = line.split_whitespace();
    match (fields.next(), fields.next(), fields.next(), fields.next()) {
        (Some("p"), Some("af"), Some(n), None) => n.parse().ok(),
        _ => None,
    }
}

fn parse_index(field: &str, count: u32) -> Result<ArgumentId, String> {
    let n: u32 = field
        .parse()
        .map_err(|_| format!("`{field}` is not an argument index"))?;
    if n == 0 || n > count {
        return Err(format!("argument {n} is outside 1..={count}"));
    }
    Ok(ArgumentId::new(n))
}

/// Serialises a framework, renumbering its arguments densely.
///
/// The returned vector maps each 1-based index in the text back to the
/// framework's own id (`ids[i - 1]`). For frameworks that never had an
/// argument removed the mapping is the identity.
pub fn format_framework(af: &ArgumentationFramework) -> (String, Vec<ArgumentId>) {
    let ids: Vec<ArgumentId> = af.arguments().iter().copied().collect();
    let index_of = |id: ArgumentId| ids.binary_search(&id).expect("attack endpoint") + 1;
    let mut out = format!("p af {}\n", ids.len());
    for &(a, b) in af.attacks() {
        out.push_str(&format!("{} {}\n", index_of(a), index_of(b)));
    }
    (out, ids)
}

/// One extension per line, members as ascending space-separated ids.
pub fn format_extensions(extensions: &[Extension]) -> String {
    let mut out = String::new();
    for ext in extensions {
        let line: Vec<String> = ext.members().iter().map(|id| id.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}
