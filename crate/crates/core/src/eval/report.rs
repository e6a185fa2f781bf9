use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::io::write_atomic;

/// One evaluated model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecord {
    pub model: String,
    pub aepe_all: f64,
    /// Key-point AEPE by detector tag.
    pub aepe_kp: BTreeMap<String, f64>,
    pub l_c: f64,
    pub params: usize,
    pub config_digest: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<ModelRecord>,
}

/// First 16 hex digits of the SHA-256 of `text`.
pub fn config_digest(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().take(8).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

impl MetricsReport {
    /// Detector tags across all rows, sorted.
    pub fn detectors(&self) -> Vec<String> {
        let mut tags: Vec<String> = self.rows.iter().flat_map(|r| r.aepe_kp.keys().cloned()).collect();
        tags.sort();
        tags.dedup();
        tags
    }

    /// `model,aepe_all,aepe_kp.<tag>...,l_c,params,config_digest`.
    pub fn to_csv(&self) -> String {
        let tags = self.detectors();
        let mut s = String::from("model,aepe_all");
        for t in &tags {
            let _ = write!(s, ",aepe_kp.{t}");
        }
        s.push_str(",l_c,params,config_digest\n");
        for r in &self.rows {
            let _ = write!(s, "{},{}", r.model, r.aepe_all);
            for t in &tags {
                match r.aepe_kp.get(t) {
                    Some(v) => {
                        let _ = write!(s, ",{v}");
                    }
                    None => s.push(','),
                }
            }
            let _ = writeln!(s, ",{},{},{}", r.l_c, r.params, r.config_digest);
        }
        s
    }

    /// JSON array of objects keyed like the CSV header.
    pub fn to_json(&self) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                let mut m = Map::new();
                m.insert("model".into(), Value::from(r.model.clone()));
                m.insert("aepe_all".into(), Value::from(r.aepe_all));
                for (t, v) in &r.aepe_kp {
                    m.insert(format!("aepe_kp.{t}"), Value::from(*v));
                }
                m.insert("l_c".into(), Value::from(r.l_c));
                m.insert("params".into(), Value::from(r.params));
                m.insert("config_digest".into(), Value::from(r.config_digest.clone()));
                Value::Object(m)
            })
            .collect();
        serde_json::to_string_pretty(&Value::Array(rows)).expect("JSON values are serializable")
    }

    /// Grouped bar chart of the AEPE columns and L_c, one group per metric.
    pub fn to_svg(&self) -> String {
        let tags = self.detectors();
        let mut metrics: Vec<(String, Vec<f64>)> = vec![("aepe_all".into(), self.rows.iter().map(|r| r.aepe_all).collect())];
        for t in &tags {
            metrics.push((format!("aepe_kp.{t}"), self.rows.iter().map(|r| r.aepe_kp.get(t).copied().unwrap_or(0.0)).collect()));
        }
        metrics.push(("l_c".into(), self.rows.iter().map(|r| r.l_c).collect()));
        let n = self.rows.len().max(1);
        let (bar, gap, height) = (18.0, 30.0, 200.0);
        let group = bar * n as f64 + gap;
        let width = 40.0 + group * metrics.len() as f64;
        let max = metrics.iter().flat_map(|(_, v)| v.iter()).copied().filter(|v| v.is_finite()).fold(1e-12, f64::max);
        let palette = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948"];
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"10\">\n",
            height + 60.0
        );
        for (g, (name, vals)) in metrics.iter().enumerate() {
            let x0 = 30.0 + g as f64 * group;
            for (i, v) in vals.iter().enumerate() {
                let h = if v.is_finite() { height * v / max } else { 0.0 };
                let _ = writeln!(
                    s,
                    "  <rect x=\"{:.1}\" y=\"{:.1}\" width=\"{bar}\" height=\"{h:.1}\" fill=\"{}\"><title>{}: {v}</title></rect>",
                    x0 + i as f64 * bar,
                    10.0 + height - h,
                    palette[i % palette.len()],
                    self.rows[i].model
                );
            }
            let _ = writeln!(s, "  <text x=\"{x0:.1}\" y=\"{:.1}\">{name}</text>", height + 25.0);
        }
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(
                s,
                "  <text x=\"{:.1}\" y=\"{:.1}\" fill=\"{}\">{}</text>",
                30.0 + 120.0 * i as f64,
                height + 45.0,
                palette[i % palette.len()],
                r.model
            );
        }
        s.push_str("</svg>\n");
        s
    }

    /// Writes `report.csv`, `report.json` and `report.svg` under `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join("report.csv"), self.to_csv().as_bytes())?;
        write_atomic(&dir.join("report.json"), self.to_json().as_bytes())?;
        write_atomic(&dir.join("report.svg"), self.to_svg().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> MetricsReport {
        let row = |m: &str, v: f64| ModelRecord {
            model: m.into(),
            aepe_all: v,
            aepe_kp: BTreeMap::from([("gf".to_string(), v * 2.0)]),
            l_c: 0.5,
            params: 10,
            config_digest: config_digest(m),
        };
        MetricsReport { rows: vec![row("a", 1.0), row("b", 2.5)] }
    }

    #[test]
    fn csv_layout() {
        let csv = report().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "model,aepe_all,aepe_kp.gf,l_c,params,config_digest");
        assert!(lines[2].starts_with("b,2.5,5,0.5,10,"));
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn json_keys() {
        let v: Value = serde_json::from_str(&report().to_json()).unwrap();
        assert_eq!(v[1]["aepe_kp.gf"], 5.0);
        assert_eq!(v[0]["config_digest"].as_str().unwrap().len(), 16);
        assert!(report().to_svg().starts_with("<svg"));
    }
}
