//! Static HTML report: one card per explained neuron with its top patches
//! and ranked concepts, followed by ablation charts when present.

use std::fmt::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use base64::Engine;
use neuron_explain::matcher::Explanation;
use neuron_explain::patches::PatchSet;
use neuron_explain::fsutil;

const PATCHES_SHOWN: usize = 4;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn sorted_entries(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = match std::fs::read_dir(dir) {
        Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).collect(),
        Err(_) => Vec::new(),
    };
    v.sort();
    v
}

/// Explanation files under `out/explanations`, ordered by model, layer and
/// numeric unit.
pub fn explanation_files(out: &Path) -> Vec<PathBuf> {
    let mut files = Vec::new();
    for model in sorted_entries(&out.join("explanations")) {
        for layer in sorted_entries(&model) {
            let mut units: Vec<(usize, PathBuf)> = sorted_entries(&layer)
                .into_iter()
                .filter_map(|p| {
                    let unit = p.file_stem()?.to_str()?.parse().ok()?;
                    (p.extension()? == "json").then_some((unit, p))
                })
                .collect();
            units.sort();
            files.extend(units.into_iter().map(|(_, p)| p));
        }
    }
    files
}

fn data_uri(path: &Path) -> Option<String> {
    let bytes = std::fs::read(path).ok()?;
    Some(format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(bytes)
    ))
}

fn neuron_card(html: &mut String, out: &Path, model: &str, ex: &Explanation) {
    let _ = write!(html, "<section class=\"neuron\"><h3>{}:{}</h3><div class=\"patches\">", escape(&ex.neuron.layer), ex.neuron.unit);
    let dir = PatchSet::dir_for(out, model, &ex.neuron);
    match PatchSet::read_meta(&dir) {
        Ok(meta) => {
            for p in meta.patches.iter().take(PATCHES_SHOWN) {
                if let Some(uri) = data_uri(&PatchSet::patch_png_path(&dir, &p.image_id)) {
                    let _ = write!(
                        html,
                        "<figure><img src=\"{uri}\" alt=\"{id}\"><figcaption>{id} ({a:.3})</figcaption></figure>",
                        id = escape(&p.image_id),
                        a = p.activation
                    );
                }
            }
        }
        Err(_) => html.push_str("<p class=\"missing\">patches not found</p>"),
    }
    html.push_str("</div><ol>");
    for (i, c) in ex.ranked.iter().take(ex.top_m.max(PATCHES_SHOWN)).enumerate() {
        let class = if i < ex.top_m { "top" } else { "rest" };
        let _ = write!(html, "<li class=\"{class}\">{} <span>{:.4}</span></li>", escape(&c.text), c.score);
    }
    html.push_str("</ol></section>\n");
}

fn ablation_section(html: &mut String, out: &Path) {
    let root = out.join("ablation");
    let mut charts = Vec::new();
    for model in sorted_entries(&root) {
        for layer in sorted_entries(&model) {
            for name in ["sorted_drops.svg", "panels.svg"] {
                let p = layer.join(name);
                if let Ok(svg) = std::fs::read_to_string(&p) {
                    charts.push(svg);
                }
            }
        }
    }
    if charts.is_empty() {
        return;
    }
    html.push_str("<h2>Unit ablation</h2>\n");
    for svg in charts {
        let _ = writeln!(html, "<div class=\"chart\">{svg}</div>");
    }
}

/// Writes `out/report.html` from the artifacts already under `out`.
pub fn write_report(out: &Path) -> anyhow::Result<PathBuf> {
    let mut html = String::from(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Neuron explanations</title>\n<style>\n\
body{font-family:sans-serif;margin:2em}\n\
.neuron{display:inline-block;vertical-align:top;border:1px solid #ccc;margin:.5em;padding:.5em;width:26em}\n\
.patches{display:flex;gap:.3em}\n\
figure{margin:0;font-size:70%}\n\
img{width:6em;height:6em;image-rendering:pixelated}\n\
li.top{font-weight:bold}\nli span{color:#777;font-size:80%}\n\
</style></head><body>\n<h1>Neuron explanations</h1>\n",
    );
    let files = explanation_files(out);
    if files.is_empty() {
        html.push_str("<p>No explanations.</p>\n");
    }
    for path in files {
        let ex = Explanation::load(&path).with_context(|| format!("reading {}", path.display()))?;
        let model = path
            .parent()
            .and_then(Path::parent)
            .and_then(Path::file_name)
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        neuron_card(&mut html, out, &model, &ex);
    }
    ablation_section(&mut html, out);
    html.push_str("</body></html>\n");
    let path = out.join("report.html");
    fsutil::write_atomic(&path, html.as_bytes())?;
    Ok(path)
}
