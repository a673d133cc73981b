//! Standalone SVG output: actual-vs-predicted material panels and log-log
//! scaling plots.

mod loglog;
mod panel;

pub use loglog::{emit_loglog_plot, loglog_csv, Curve};
pub use panel::{render_material_panel, ARROW_FRACTION};

/// Escape text for XML content and attribute values.
pub(crate) fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}
