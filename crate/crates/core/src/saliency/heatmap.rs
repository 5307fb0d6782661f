use std::fmt::Write;

/// One rendered map: the generated token and its relevance per input position.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapRow {
    pub label: String,
    pub relevance: Vec<f64>,
}

fn normalized(row: &HeatmapRow) -> Vec<f64> {
    let max = row.relevance.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    if max == 0.0 {
        return vec![0.0; row.relevance.len()];
    }
    row.relevance.iter().map(|r| r / max).collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Standalone HTML page, one row per generated token.
pub fn render_html(title: &str, input_tokens: &[String], rows: &[HeatmapRow]) -> String {
    let mut out = String::new();
    out.push_str("<!DOCTYPE html>\n");
    out.push_str("<!-- Opacity is |R| divided by the largest |R| in the same row. Red is positive relevance, blue negative. -->\n");
    let _ = writeln!(out, "<html><head><meta charset=\"utf-8\"><title>{}</title>", escape(title));
    out.push_str("<style>body{font-family:monospace}td{padding:2px 4px}th{text-align:right;padding-right:8px}</style>\n");
    out.push_str("</head><body>\n");
    let _ = writeln!(out, "<h3>{}</h3>\n<table>", escape(title));
    for row in rows {
        let _ = write!(out, "<tr><th>{}</th>", escape(&row.label));
        for (token, (n, r)) in input_tokens.iter().zip(normalized(row).iter().zip(&row.relevance)) {
            let (red, blue) = if *n >= 0.0 { (220, 40) } else { (40, 220) };
            let _ = write!(
                out,
                "<td style=\"background:rgba({red},40,{blue},{:.3})\" title=\"{r:.6e}\">{}</td>",
                n.abs(),
                escape(token)
            );
        }
        out.push_str("</tr>\n");
    }
    out.push_str("</table>\n</body></html>\n");
    out
}

/// Terminal rendering with 24-bit background colours.
pub fn render_ansi(input_tokens: &[String], rows: &[HeatmapRow]) -> String {
    let mut out = String::new();
    let width = rows.iter().map(|r| r.label.chars().count()).max().unwrap_or(0);
    for row in rows {
        let _ = write!(out, "{:>width$} |", row.label);
        for (token, n) in input_tokens.iter().zip(normalized(row)) {
            let fade = (255.0 * (1.0 - n.abs())).round() as u8;
            let (r, g, b) = if n >= 0.0 { (255, fade, fade) } else { (fade, fade, 255) };
            let _ = write!(out, " \x1b[48;2;{r};{g};{b}m\x1b[30m{token}\x1b[0m");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tokens() -> Vec<String> {
        vec!["a".into(), "<b>".into(), "c".into()]
    }

    #[test]
    fn html_escapes_and_normalizes_per_row() {
        let rows = vec![
            HeatmapRow { label: "x".into(), relevance: vec![2.0, -1.0, 0.0] },
            HeatmapRow { label: "y".into(), relevance: vec![0.0, 0.0, 0.0] },
        ];
        let html = render_html("t", &tokens(), &rows);
        assert!(html.contains("&lt;b&gt;"));
        assert!(html.contains("rgba(220,40,40,1.000)"));
        assert!(html.contains("rgba(40,40,220,0.500)"));
        assert_eq!(html.matches("<tr>").count(), 2);
    }

    #[test]
    fn ansi_has_one_line_per_row() {
        let rows = vec![HeatmapRow { label: "x".into(), relevance: vec![1.0, 0.5, -1.0] }];
        let text = render_ansi(&tokens(), &rows);
        assert_eq!(text.lines().count(), 1);
        assert!(text.contains("\x1b[48;2;255;0;0m"));
        assert!(text.contains("\x1b[48;2;0;0;255m"));
    }
}
