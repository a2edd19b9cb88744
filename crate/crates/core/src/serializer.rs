//! Markdown rendering of tables for prompts.

use serde::{Deserialize, Serialize};

use crate::corpus::{ColumnRole, TableDoc};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SerializationOptions {
    pub max_rows: usize,
    pub max_words_per_cell: usize,
    pub mask_headers: bool,
    pub include_context_columns: bool,
}

impl Default for SerializationOptions {
    fn default() -> Self {
        Self {
            max_rows: 5,
            max_words_per_cell: 20,
            mask_headers: true,
            include_context_columns: true,
        }
    }
}

impl SerializationOptions {
    fn checked(self) -> Self {
        Self {
            max_rows: self.max_rows.max(1),
            max_words_per_cell: self.max_words_per_cell.max(1),
            ..self
        }
    }
}

/// The prompt-facing name of a zero-based column index.
pub fn column_name(index: usize) -> String {
    format!("Column {}", index + 1)
}

/// Truncates `cell` to its first `max_words` whitespace-separated words,
/// collapses internal whitespace (including newlines) to single spaces and
/// escapes pipes.
pub fn render_cell(cell: &str, max_words: usize) -> String {
    let words: Vec<&str> = cell.split_whitespace().take(max_words).collect();
    words.join(" ").replace('|', "\\|")
}

/// Renders `table` as a markdown pipe table.
///
/// Columns keep their one-based position in the full table even when
/// context columns are left out, so answers keyed on `Column N` stay aligned.
pub fn serialize_table(table: &TableDoc, opts: &SerializationOptions) -> String {
    let opts = opts.checked();
    let columns: Vec<usize> = (0..table.n_columns())
        .filter(|c| opts.include_context_columns || table.column_roles[*c] == ColumnRole::Target)
        .collect();

    let header: Vec<String> = columns
        .iter()
        .map(|&c| match (&table.original_headers, opts.mask_headers) {
            (Some(h), false) => render_cell(&h[c], opts.max_words_per_cell),
            _ => column_name(c),
        })
        .collect();

    let mut lines = Vec::with_capacity(2 + opts.max_rows.min(table.n_rows()));
    lines.push(pipe_row(&header));
    lines.push(pipe_row(&vec!["---".to_string(); columns.len()]));
    for row in table.cells.iter().take(opts.max_rows) {
        let cells: Vec<String> = columns
            .iter()
            .map(|&c| render_cell(&row[c], opts.max_words_per_cell))
            .collect();
        lines.push(pipe_row(&cells));
    }
    lines.join("\n")
}

fn pipe_row(cells: &[String]) -> String {
    let mut s = String::from("|");
    for c in cells {
        s.push(' ');
        s.push_str(c);
        s.push_str(" |");
    }
    s
}

/// The first `max_rows` cells of one column, each rendered with
/// [`render_cell`]. Used for error excerpts and definition demonstrations.
pub fn column_excerpt(table: &TableDoc, column: usize, opts: &SerializationOptions) -> Vec<String> {
    let opts = opts.checked();
    table
        .column_cells(column)
        .take(opts.max_rows)
        .map(|c| render_cell(c, opts.max_words_per_cell))
        .collect()
}
