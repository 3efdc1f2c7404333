//! Benchmark-style evaluation over a scene directory.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{binarize, list_scenes, load_scene, SceneRecord};
use crate::error::{Error, Result};
use crate::metrics::{impro, MetricConfig, MetricRow};
use crate::model::Sample;
use crate::prompt::PromptKind;
use crate::tensor::Tensor;
use crate::train::csv_err;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneScore {
    pub scene: String,
    pub metrics: MetricRow,
}

/// Results for one prompt type.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptReport {
    pub prompt: PromptKind,
    pub scenes: Vec<SceneScore>,
    pub mean: MetricRow,
    /// Relative improvement over the baseline report's row for the same prompt type.
    pub impro: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub model: String,
    pub baseline: Option<String>,
    pub groups: Vec<PromptReport>,
    /// Scene directories that could not be evaluated.
    pub skipped: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    prompt: PromptKind,
    row: String,
    scene: String,
    mse: f64,
    mad: f64,
    sad: f64,
    grad: f64,
    conn: f64,
    impro: Option<f64>,
}

const SCENE_ROW: &str = "scene";
const MEAN_ROW: &str = "mean";

impl EvalReport {
    pub fn group(&self, prompt: PromptKind) -> Option<&PromptReport> {
        self.groups.iter().find(|g| g.prompt == prompt)
    }

    /// Fills `impro` of every group against the matching group of `baseline`.
    pub fn compare_to(&mut self, baseline: &EvalReport) -> Result<()> {
        for g in &mut self.groups {
            let b = baseline
                .group(g.prompt)
                .ok_or_else(|| Error::Argument(format!("baseline has no {} rows", g.prompt)))?;
            g.impro = Some(impro(&b.mean.values(), &g.mean.values())?);
        }
        self.baseline = Some(baseline.model.clone());
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut head = format!("# model={}\n", self.model);
        if let Some(b) = &self.baseline {
            head.push_str(&format!("# baseline={b}\n"));
        }
        for s in &self.skipped {
            head.push_str(&format!("# skipped={s}\n"));
        }
        let mut w = csv::Writer::from_writer(head.into_bytes());
        for g in &self.groups {
            let row = |kind: &str, scene: &str, m: &MetricRow, impro: Option<f64>| CsvRow {
                prompt: g.prompt,
                row: kind.into(),
                scene: scene.into(),
                mse: m.mse,
                mad: m.mad,
                sad: m.sad,
                grad: m.grad,
                conn: m.conn,
                impro,
            };
            for s in &g.scenes {
                w.serialize(row(SCENE_ROW, &s.scene, &s.metrics, None)).map_err(csv_err)?;
            }
            w.serialize(row(MEAN_ROW, "", &g.mean, g.impro)).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut model = None;
        let mut baseline = None;
        let mut skipped = Vec::new();
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            let (k, v) = line[1..].trim_start().split_once('=').ok_or_else(|| Error::Format(format!("bad report header {line:?}")))?;
            match k {
                "model" => model = Some(v.to_string()),
                "baseline" => baseline = Some(v.to_string()),
                "skipped" => skipped.push(v.to_string()),
                _ => return Err(Error::Format(format!("unknown report header {k:?}"))),
            }
        }
        let mut groups: Vec<PromptReport> = Vec::new();
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        for rec in reader.deserialize::<CsvRow>() {
            let r = rec.map_err(csv_err)?;
            let metrics = MetricRow { mse: r.mse, mad: r.mad, sad: r.sad, grad: r.grad, conn: r.conn };
            if groups.last().is_none_or(|g| g.prompt != r.prompt) {
                groups.push(PromptReport { prompt: r.prompt, scenes: Vec::new(), mean: MetricRow::default(), impro: None });
            }
            let g = groups.last_mut().expect("pushed above");
            match r.row.as_str() {
                SCENE_ROW => g.scenes.push(SceneScore { scene: r.scene, metrics }),
                MEAN_ROW => {
                    g.mean = metrics;
                    g.impro = r.impro;
                }
                other => return Err(Error::Format(format!("unknown report row kind {other:?}"))),
            }
        }
        let model = model.ok_or_else(|| Error::Format("report names no model".into()))?;
        Ok(EvalReport { model, baseline, groups, skipped })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    /// Aligned text table with one line per prompt type.
    pub fn to_table(&self) -> String {
        let mut out = format!("model: {}", self.model);
        if let Some(b) = &self.baseline {
            let _ = write!(out, "  baseline: {b}");
        }
        out.push('\n');
        let _ = writeln!(out, "{:<8}{:>8}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}", "Prompt", "Scenes", "MSE", "MAD", "SAD", "Grad", "Conn", "Impro");
        for g in &self.groups {
            let m = &g.mean;
            let imp = g.impro.map_or("-".to_string(), |v| format!("{v:.2}%"));
            let _ = writeln!(
                out,
                "{:<8}{:>8}{:>10.4}{:>10.4}{:>10.2}{:>10.2}{:>10.2}{:>10}",
                g.prompt.name(),
                g.scenes.len(),
                m.mse,
                m.mad,
                m.sad,
                m.grad,
                m.conn,
                imp
            );
        }
        if !self.skipped.is_empty() {
            let _ = writeln!(out, "skipped {} scene(s)", self.skipped.len());
        }
        out
    }
}

/// Loads every scene under `root`, returning the readable ones and the names of the rest.
pub fn load_scenes(root: &Path) -> Result<(Vec<SceneRecord>, Vec<String>)> {
    let dirs = list_scenes(root)?;
    let loaded: Vec<(String, Result<SceneRecord>)> =
        dirs.par_iter().map(|d| (d.file_name().unwrap_or_default().to_string_lossy().into_owned(), load_scene(d))).collect();
    let mut ok = Vec::new();
    let mut skipped = Vec::new();
    for (name, r) in loaded {
        match r {
            Ok(rec) => ok.push(rec),
            Err(e) => {
                log::warn!("skipping {name}: {e}");
                skipped.push(name);
            }
        }
    }
    Ok((ok, skipped))
}

/// Evaluates `ckpt` on every scene under `root` for each prompt type.
pub fn evaluate(ckpt: &Checkpoint, name: &str, root: &Path, prompts: &[PromptKind], metrics: &MetricConfig) -> Result<EvalReport> {
    metrics.validate()?;
    let (records, mut skipped) = load_scenes(root)?;
    let mut groups = Vec::new();
    for &kind in prompts {
        let mut samples = Vec::new();
        let mut used = Vec::new();
        for r in &records {
            match r.prompt_for(kind, r.prompt_seed()) {
                Ok(prompt) => {
                    samples.push(Sample { image: r.image.clone(), prompt, opacity: r.prompt.opacity });
                    used.push(r);
                }
                Err(e) => {
                    log::warn!("skipping {} for {kind} prompts: {e}", r.name());
                    let n = r.name();
                    if !skipped.contains(&n) {
                        skipped.push(n);
                    }
                }
            }
        }
        let preds = ckpt.predict(&samples)?;
        let scenes = used
            .par_iter()
            .zip(preds.par_iter())
            .map(|(r, p)| {
                let m = MetricRow::compute(&p.cast(), &r.alpha.cast(), metrics)?;
                Ok(SceneScore { scene: r.name(), metrics: m })
            })
            .collect::<Result<Vec<_>>>()?;
        let rows: Vec<MetricRow> = scenes.iter().map(|s| s.metrics).collect();
        let mean = MetricRow::mean(&rows).ok_or_else(|| Error::Argument(format!("no scene under {} could be evaluated", root.display())))?;
        groups.push(PromptReport { prompt: kind, scenes, mean, impro: None });
    }
    skipped.sort();
    Ok(EvalReport { model: name.to_string(), baseline: None, groups, skipped })
}

/// Mean of `values` over the support of `alpha` and over its complement.
pub fn inside_outside_means(values: &Tensor<f64>, alpha: &Tensor<f64>) -> Result<(f64, f64)> {
    if values.shape() != alpha.shape() {
        return Err(crate::error::dim_err!("map {:?} and matte {:?} differ", values.shape(), alpha.shape()));
    }
    let support = binarize(alpha)?;
    let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
    for (&v, &inside) in values.data().iter().zip(support.cells()) {
        if inside {
            si += v;
            ni += 1;
        } else {
            so += v;
            no += 1;
        }
    }
    if ni == 0 || no == 0 {
        return Err(Error::Argument("support is empty or covers the whole image".into()));
    }
    Ok((si / ni as f64, so / no as f64))
}

/// Mean predicted alpha inside the prompted instance and inside the distractor.
pub fn selection_means(pred: &Tensor<f64>, prompted: &Tensor<f64>, distractor: &Tensor<f64>) -> Result<(f64, f64)> {
    let (a, _) = inside_outside_means(pred, prompted)?;
    let (b, _) = inside_outside_means(pred, distractor)?;
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::save_oracle;
    use crate::data::{write_dataset, SceneConfig};

    fn report() -> EvalReport {
        let row = |k: f64| MetricRow { mse: 0.1 * k, mad: 1.0 / 3.0 * k, sad: 12.345678901234 * k, grad: 7.0, conn: 0.0001 * k };
        let scenes = vec![SceneScore { scene: "scene_000000".into(), metrics: row(1.0) }, SceneScore { scene: "a,b".into(), metrics: row(3.0) }];
        let mean = MetricRow::mean(&scenes.iter().map(|s| s.metrics).collect::<Vec<_>>()).unwrap();
        EvalReport {
            model: "trained".into(),
            baseline: Some("untrained".into()),
            groups: vec![
                PromptReport { prompt: PromptKind::Point, scenes: scenes.clone(), mean, impro: Some(-12.5) },
                PromptReport { prompt: PromptKind::Mask, scenes, mean, impro: None },
            ],
            skipped: vec!["scene_000009".into()],
        }
    }

    #[test]
    fn csv_round_trips_exactly() {
        let r = report();
        let text = r.to_csv().unwrap();
        assert_eq!(EvalReport::from_csv(&text).unwrap(), r);
        let bare = EvalReport { baseline: None, skipped: vec![], ..r };
        assert_eq!(EvalReport::from_csv(&bare.to_csv().unwrap()).unwrap(), bare);
        assert!(EvalReport::from_csv("prompt,row\n").is_err());
    }

    #[test]
    fn table_has_the_benchmark_columns() {
        let t = report().to_table();
        let header = t.lines().nth(1).unwrap();
        let cols: Vec<&str> = header.split_whitespace().collect();
        assert_eq!(cols, ["Prompt", "Scenes", "MSE", "MAD", "SAD", "Grad", "Conn", "Impro"]);
        assert!(t.contains("-12.50%"));
        assert!(t.contains("skipped 1 scene"));
    }

    #[test]
    fn oracle_scores_zero_and_broken_scenes_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        write_dataset(&data, 5, 3, &SceneConfig { height: 32, width: 32, ..Default::default() }).unwrap();
        std::fs::remove_file(data.join("scene_000002").join("alpha.png")).unwrap();
        save_oracle(&dir.path().join("ck"), &data, "{}").unwrap();
        let ck = Checkpoint::load(&dir.path().join("ck")).unwrap();
        let r = evaluate(&ck, "oracle", &data, &PromptKind::ALL, &MetricConfig::default()).unwrap();
        assert_eq!(r.skipped, vec!["scene_000002".to_string()]);
        for g in &r.groups {
            assert_eq!(g.scenes.len(), 4);
            assert_eq!(g.mean, MetricRow::default());
        }
        let again = evaluate(&ck, "oracle", &data, &PromptKind::ALL, &MetricConfig::default()).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn aggregates_are_scene_means() {
        let r = report();
        for g in &r.groups {
            let m = MetricRow::mean(&g.scenes.iter().map(|s| s.metrics).collect::<Vec<_>>()).unwrap();
            for (a, b) in m.values().iter().zip(g.mean.values()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        let mut r2 = report();
        r2.compare_to(&report()).unwrap();
        assert_eq!(r2.groups[0].impro, Some(0.0));
    }

    #[test]
    fn region_means() {
        let alpha = Tensor::from_fn([4, 4], |i| if i < 8 { 1.0 } else { 0.0 });
        let vals = Tensor::from_fn([4, 4], |i| i as f64);
        assert_eq!(inside_outside_means(&vals, &alpha).unwrap(), (3.5, 11.5));
        let other = Tensor::from_fn([4, 4], |i| if i >= 12 { 1.0 } else { 0.0 });
        assert_eq!(selection_means(&vals, &alpha, &other).unwrap(), (3.5, 13.5));
        assert!(inside_outside_means(&vals, &Tensor::zeros([4, 4])).is_err());
    }
}
