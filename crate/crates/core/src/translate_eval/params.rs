use std::fmt::Write as _;

use super::{EvalError, Result};
use crate::model::layout::{component_of, Layout};
use crate::model::{Component, ModelDims};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Paradigm {
    /// One plain encoder-decoder per ordered language pair.
    Pairwise,
    /// One shared encoder, a decoder per language and the latent projectors.
    Unified,
}

impl Paradigm {
    pub fn name(self) -> &'static str {
        match self {
            Paradigm::Pairwise => "pairwise",
            Paradigm::Unified => "unified",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamReport {
    pub n_langs: usize,
    pub encoder: usize,
    /// One decoder; all decoders have the same size.
    pub decoder: usize,
    /// All projectors for `n_langs` languages.
    pub projectors: usize,
    pub pairwise_models: usize,
    pub pairwise_total: usize,
    pub unified_total: usize,
    /// Same totals from the parameter layout without allocating.
    pub layout_unified_total: usize,
}

impl ParamReport {
    pub fn total(&self, p: Paradigm) -> usize {
        match p {
            Paradigm::Pairwise => self.pairwise_total,
            Paradigm::Unified => self.unified_total,
        }
    }

    pub fn ratio(&self) -> f64 {
        self.unified_total as f64 / self.pairwise_total as f64
    }
}

/// Allocates every parameter array of a model with `dims.n_langs`
/// languages, one array at a time, and tallies element counts per
/// component. Reference-sized models never need to be resident at once.
pub fn count_params(dims: &ModelDims) -> Result<ParamReport> {
    dims.validate()?;
    let n = dims.n_langs;
    if n < 2 {
        return Err(EvalError::Config(format!("need at least 2 languages, got {n}")));
    }
    let layout = Layout::new(dims);
    let (mut encoder, mut projectors) = (0, 0);
    let mut decoders = vec![0usize; n];
    for spec in &layout.specs {
        let numel = Tensor::zeros(spec.shape.clone()).numel();
        match component_of(&spec.name) {
            Component::Encoder => encoder += numel,
            Component::Decoder(l) => decoders[l] += numel,
            Component::Projector => projectors += numel,
        }
    }
    let decoder = decoders[0];
    if decoders.iter().any(|&d| d != decoder) {
        return Err(EvalError::Config("decoders differ in size".into()));
    }
    let pairwise_models = n * (n - 1);
    Ok(ParamReport {
        n_langs: n,
        encoder,
        decoder,
        projectors,
        pairwise_models,
        pairwise_total: pairwise_models * (encoder + decoder),
        unified_total: encoder + n * decoder + projectors,
        layout_unified_total: layout.total(),
    })
}

/// `N,paradigm,total_params` rows.
pub fn params_csv(reports: &[ParamReport]) -> String {
    let mut s = String::from("N,paradigm,total_params\n");
    for r in reports {
        for p in [Paradigm::Pairwise, Paradigm::Unified] {
            let _ = writeln!(s, "{},{},{}", r.n_langs, p.name(), r.total(p));
        }
    }
    s
}

/// Line chart of both totals against the language count.
pub fn param_chart_svg(reports: &[ParamReport]) -> String {
    let (w, h, m) = (640.0, 400.0, 60.0);
    let max_y = reports.iter().map(|r| r.pairwise_total.max(r.unified_total)).max().unwrap_or(1).max(1) as f64;
    let (min_n, max_n) = match (reports.first(), reports.last()) {
        (Some(a), Some(b)) => (a.n_langs as f64, (b.n_langs as f64).max(a.n_langs as f64 + 1.0)),
        _ => (0.0, 1.0),
    };
    let x = |n: usize| m + (n as f64 - min_n) / (max_n - min_n) * (w - 2.0 * m);
    let y = |v: usize| h - m - v as f64 / max_y * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - m, w - m, h - m);
    let _ = writeln!(s, r#"<line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#, h - m);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">languages (N)</text>"#, w / 2.0, h - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">parameters</text>"#,
        h / 2.0,
        h / 2.0
    );
    let _ = writeln!(s, r#"<text x="{m}" y="{}">max {max_y:.3e}</text>"#, m - 10.0);
    for r in reports {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            x(r.n_langs),
            h - m + 18.0,
            r.n_langs
        );
    }
    for (p, colour) in [(Paradigm::Pairwise, "#c0392b"), (Paradigm::Unified, "#2471a3")] {
        let pts: Vec<String> = reports.iter().map(|r| format!("{:.1},{:.1}", x(r.n_langs), y(r.total(p)))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        for r in reports {
            let _ =
                writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{colour}"/>"#, x(r.n_langs), y(r.total(p)));
        }
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" fill=\"#c0392b\">pairwise</text>", w - m - 80.0, m);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" fill=\"#2471a3\">unified</text>", w - m - 80.0, m + 16.0);
    s.push_str("</svg>\n");
    s
}
