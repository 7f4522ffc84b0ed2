// Jupyter notebook cells.
//
// Code cells are laid end to end into one virtual source; block line
// numbers refer to that virtual source, and `cell_index` keeps the cell's
// position in the original notebook (markdown and raw cells included).

use serde::Deserialize;

use super::{is_blank, BlockKind, CodeBlock};

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Source {
    Text(String),
    Lines(Vec<String>),
}

#[derive(Debug, Deserialize)]
struct RawCell {
    cell_type: String,
    #[serde(default)]
    source: Option<Source>,
}

#[derive(Debug, Deserialize)]
struct RawNotebook {
    cells: Vec<RawCell>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NotebookCellSource {
    pub cell_index: usize,
    pub source: String,
}

/// Code cells of a notebook, in order, with their original positions.
pub fn parse_notebook(content: &str) -> Result<Vec<NotebookCellSource>, serde_json::Error> {
    let nb: RawNotebook = serde_json::from_str(content)?;
    Ok(nb
        .cells
        .into_iter()
        .enumerate()
        .filter(|(_, c)| c.cell_type == "code")
        .map(|(cell_index, c)| {
            let source = match c.source {
                Some(Source::Text(s)) => s,
                Some(Source::Lines(parts)) => parts.concat(),
                None => String::new(),
            };
            NotebookCellSource { cell_index, source }
        })
        .collect())
}

/// Virtual source text (code cells joined, one cell after another).
pub(super) fn virtual_lines(cells: &[NotebookCellSource]) -> Vec<(usize, String)> {
    cells.iter().flat_map(|c| c.source.lines().map(move |l| (c.cell_index, l.to_string()))).collect()
}

pub(super) fn segment_cells(rel_path: &str, cells: &[NotebookCellSource]) -> Vec<CodeBlock> {
    let lines = virtual_lines(cells);
    if lines.iter().all(|(_, l)| is_blank(l)) {
        return Vec::new();
    }
    let all_text = lines.iter().map(|(_, l)| l.as_str()).collect::<Vec<_>>().join("\n");
    let file = CodeBlock::new(rel_path, BlockKind::File, 1, lines.len(), all_text);
    let mut blocks = vec![file];
    let mut first_line = 1;
    for cell in cells {
        let cell_lines: Vec<&str> = cell.source.lines().collect();
        let start = cell_lines.iter().position(|l| !is_blank(l));
        let end = cell_lines.iter().rposition(|l| !is_blank(l));
        if let (Some(start), Some(end)) = (start, end) {
            let content = cell_lines[start..=end].join("\n");
            let mut block =
                CodeBlock::new(rel_path, BlockKind::NotebookCell, first_line + start, first_line + end, content);
            block.cell_index = Some(cell.cell_index);
            block.parent_id = Some(blocks[0].id.clone());
            blocks.push(block);
        }
        first_line += cell_lines.len();
    }
    blocks
}
