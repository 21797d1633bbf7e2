//! Cost report and plan rendering. Column order is fixed; rows follow graph
//! order.

use std::fmt::Write as _;

use gip_core::{CostReport, LayerCost, OpCounts, Plan};
use serde::{Deserialize, Serialize};

pub const COUNTER_COLUMNS: [&str; 6] = [
    "rotations",
    "ct_ct_mults",
    "pt_ct_mults",
    "adds",
    "bootstraps",
    "max_depth",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountsDoc {
    pub rotations: u64,
    pub ct_ct_mults: u64,
    pub pt_ct_mults: u64,
    pub adds: u64,
    pub bootstraps: u64,
    pub max_depth: u32,
}

impl From<OpCounts> for CountsDoc {
    fn from(c: OpCounts) -> Self {
        CountsDoc {
            rotations: c.rotations,
            ct_ct_mults: c.ct_ct_mults,
            pt_ct_mults: c.pt_ct_mults,
            adds: c.adds,
            bootstraps: c.bootstraps,
            max_depth: c.max_depth,
        }
    }
}

impl From<CountsDoc> for OpCounts {
    fn from(c: CountsDoc) -> Self {
        OpCounts {
            rotations: c.rotations,
            ct_ct_mults: c.ct_ct_mults,
            pt_ct_mults: c.pt_ct_mults,
            adds: c.adds,
            bootstraps: c.bootstraps,
            max_depth: c.max_depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDoc {
    pub node: String,
    pub kind: String,
    #[serde(flatten)]
    pub counts: CountsDoc,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub layers: Vec<LayerDoc>,
    pub totals: CountsDoc,
}

impl ReportDoc {
    pub fn new(r: &CostReport) -> Self {
        ReportDoc {
            layers: r
                .layers
                .iter()
                .map(|l| LayerDoc {
                    node: l.node.clone(),
                    kind: l.kind.clone(),
                    counts: l.counts.into(),
                })
                .collect(),
            totals: r.totals().into(),
        }
    }

    pub fn to_report(&self) -> CostReport {
        CostReport {
            layers: self
                .layers
                .iter()
                .map(|l| LayerCost {
                    node: l.node.clone(),
                    kind: l.kind.clone(),
                    counts: l.counts.into(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Json,
}

pub fn render(r: &CostReport, format: Format) -> String {
    match format {
        Format::Text => render_text(r),
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&ReportDoc::new(r)).expect("report serializes");
            s.push('\n');
            s
        }
    }
}

fn counter_cells(c: &OpCounts) -> [String; 6] {
    [
        c.rotations.to_string(),
        c.ct_ct_mults.to_string(),
        c.pt_ct_mults.to_string(),
        c.adds.to_string(),
        c.bootstraps.to_string(),
        c.max_depth.to_string(),
    ]
}

/// Left-aligned text columns separated by two spaces.
fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: &mut dyn Iterator<Item = &str>| {
        let mut l = String::new();
        for (i, (cell, w)) in cells.zip(&widths).enumerate() {
            if i > 0 {
                l.push_str("  ");
            }
            let _ = write!(l, "{cell:<w$}");
        }
        out.push_str(l.trim_end());
        out.push('\n');
    };
    line(&mut header.iter().copied());
    for r in rows {
        line(&mut r.iter().map(String::as_str));
    }
    out
}

pub fn render_text(r: &CostReport) -> String {
    let mut header = vec!["node", "kind"];
    header.extend(COUNTER_COLUMNS);
    let mut rows: Vec<Vec<String>> = r
        .layers
        .iter()
        .map(|l| {
            let mut row = vec![l.node.clone(), l.kind.clone()];
            row.extend(counter_cells(&l.counts));
            row
        })
        .collect();
    let mut total = vec!["total".to_string(), String::new()];
    total.extend(counter_cells(&r.totals()));
    rows.push(total);
    table(&header, &rows)
}

pub fn render_plan(p: &Plan) -> String {
    let mut header = vec!["node", "kind", "shape", "g_in", "g_out", "level", "bootstrap"];
    header.extend(COUNTER_COLUMNS);
    let rows: Vec<Vec<String>> = p
        .entries
        .iter()
        .map(|e| {
            let o = &e.output;
            let mut row = vec![
                e.node.clone(),
                e.kind.to_string(),
                format!("{}x{}x{}", o.channels(), o.height(), o.width()),
                e.inputs[0].factor().to_string(),
                o.factor().to_string(),
                format!("{}->{}", e.level_before, e.level_after),
                if e.bootstrap_before { "yes" } else { "-" }.to_string(),
            ];
            row.extend(counter_cells(&e.predicted));
            row
        })
        .collect();
    let mut out = table(&header, &rows);
    let t = p.totals();
    let _ = writeln!(
        out,
        "input {}x{}x{} g={} level {}; totals: {} rotations, {} ct-ct, {} pt-ct, {} adds, {} bootstraps",
        p.input.channels(),
        p.input.height(),
        p.input.width(),
        p.input.factor(),
        p.input_level,
        t.rotations,
        t.ct_ct_mults,
        t.pt_ct_mults,
        t.adds,
        t.bootstraps
    );
    out
}
