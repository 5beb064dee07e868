//! Best-effort LaTeX to plain text conversion for problem statements.

const DROPPED_ENVIRONMENTS: &[&str] = &["figure", "table", "tabular"];

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Converts a LaTeX statement to plain text.
///
/// Whitespace runs are collapsed first; then math delimiters are removed
/// (keeping their content), `\cmd{arg}` becomes `arg`, bare commands are
/// dropped and `figure`/`table`/`tabular` environments are removed with
/// their content.
pub fn latex_to_text(statement: &str) -> String {
    let collapsed = collapse_whitespace(statement);
    let chars: Vec<char> = collapsed.chars().collect();
    let mut out = String::with_capacity(collapsed.len());
    convert(&chars, &mut out);
    out.trim().to_string()
}

fn read_name(chars: &[char], start: usize) -> (String, usize) {
    let mut i = start;
    while i < chars.len() && chars[i].is_ascii_alphabetic() {
        i += 1;
    }
    (chars[start..i].iter().collect(), i)
}

/// Index of the `}` closing the `{` at `open`, if balanced.
fn matching_brace(chars: &[char], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut i = open;
    while i < chars.len() {
        match chars[i] {
            '\\' => i += 1,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
        i += 1;
    }
    None
}

fn find_subslice(chars: &[char], from: usize, needle: &str) -> Option<usize> {
    let needle: Vec<char> = needle.chars().collect();
    (from..chars.len().saturating_sub(needle.len() - 1)).find(|&i| chars[i..].starts_with(&needle))
}

fn convert(chars: &[char], out: &mut String) {
    let mut i = 0;
    while i < chars.len() {
        match chars[i] {
            '$' => i += 1,
            '~' => {
                out.push(' ');
                i += 1;
            }
            '{' | '}' => i += 1,
            '%' => {
                // Whitespace was collapsed, so a comment runs to the end.
                i = chars.len();
            }
            '\\' => i = command(chars, i, out),
            c => {
                out.push(c);
                i += 1;
            }
        }
    }
}

/// Handles the command starting at the backslash at `start` and returns
/// the index after it.
fn command(chars: &[char], start: usize, out: &mut String) -> usize {
    let Some(&next) = chars.get(start + 1) else {
        return start + 1;
    };
    if !next.is_ascii_alphabetic() {
        match next {
            '(' | ')' | '[' | ']' | '$' | ',' | ';' | '!' => {}
            '\\' => out.push(' '),
            c => out.push(c),
        }
        return start + 2;
    }
    let (name, mut i) = read_name(chars, start + 1);
    if name == "begin" || name == "end" {
        let Some(close) = chars.get(i).filter(|&&c| c == '{').and_then(|_| matching_brace(chars, i)) else {
            return i;
        };
        let env: String = chars[i + 1..close].iter().collect();
        if name == "begin" && DROPPED_ENVIRONMENTS.contains(&env.as_str()) {
            let end_marker = format!("\\end{{{env}}}");
            return match find_subslice(chars, close + 1, &end_marker) {
                Some(p) => p + end_marker.chars().count(),
                None => chars.len(),
            };
        }
        return close + 1;
    }
    if chars.get(i) == Some(&'[') {
        if let Some(p) = chars[i..].iter().position(|&c| c == ']') {
            i += p + 1;
        }
    }
    let mut first = true;
    while chars.get(i) == Some(&'{') {
        let Some(close) = matching_brace(chars, i) else {
            // Unbalanced: keep the rest verbatim.
            out.extend(chars[i..].iter());
            return chars.len();
        };
        if !first {
            out.push(' ');
        }
        convert(&chars[i + 1..close], out);
        first = false;
        i = close + 1;
    }
    i
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_examples() {
        assert_eq!(latex_to_text("Find $n$ numbers"), "Find n numbers");
        assert_eq!(latex_to_text("\\textbf{bold} text"), "bold text");
        assert_eq!(
            latex_to_text("see \\begin{figure}...\\end{figure} below"),
            "see  below"
        );
    }

    #[test]
    fn math_and_nested_commands() {
        assert_eq!(
            latex_to_text("Given $$1 \\le n \\le 10^5$$ and \\(a_i\\)"),
            "Given 1  n  10^5 and a_i"
        );
        assert_eq!(latex_to_text("\\frac{a}{b}"), "a b");
        assert_eq!(latex_to_text("\\emph{very \\textit{nested}} ok"), "very nested ok");
        assert_eq!(latex_to_text("x\\\\y"), "x y");
    }

    #[test]
    fn other_environments_keep_content() {
        let s = "\\begin{itemize} \\item one \\item two \\end{itemize}";
        assert_eq!(latex_to_text(s), "one  two");
        let s = "a \\begin{tabular}{cc} 1 & 2 \\end{tabular} b";
        assert_eq!(latex_to_text(s), "a  b");
    }

    #[test]
    fn output_has_no_markup_for_balanced_input() {
        let s = "Let $x_i$ be \\textbf{the} $i$-th \\emph{element}, see \\cite{k} and $\\sum a$.";
        let t = latex_to_text(s);
        assert!(!t.contains('$'), "{t}");
        assert!(!t.contains('\\'), "{t}");
    }

    #[test]
    fn unbalanced_braces_keep_remaining_text() {
        assert_eq!(latex_to_text("\\textbf{open text"), "{open text");
    }
}
