//! INI configuration: a `[run]` section mirroring the command-line flags and
//! a `[grid]` section overriding the tuning grid. Flags win over the file.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use clap::ValueEnum;
use ini::{Ini, Properties};
use latte_core::models::{ContextAggregation, ContextName};
use latte_core::similarity::LawKind;
use latte_core::tuning::GridSpec;

use crate::args::{parse_ranks, ContextArg, DataOpts, EvalOpts, FormatArg, LawArg, ModelArg, ModelOpts, StageArg};

/// A problem with how the tool was invoked; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

const RUN_KEYS: &[&str] = &[
    "input", "format", "scale_k", "test_frac", "model", "law", "ranks", "norm_factor", "l2", "seed", "max_iters", "tol",
    "context", "topn", "threshold", "stage", "out",
];
const GRID_KEYS: &[&str] = &["norm_factors", "ranks", "rating_ranks", "l2", "laws", "contexts"];

/// Parsed configuration file; empty when no file was given.
#[derive(Debug, Default)]
pub struct FileConfig {
    run: Properties,
    grid: Option<Properties>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let ini = Ini::load_from_file(path).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        let mut cfg = Self::default();
        for (section, props) in ini.iter() {
            match section {
                None | Some("run") => {
                    check_keys(props, RUN_KEYS, section.unwrap_or("general"))?;
                    for (k, v) in props.iter() {
                        cfg.run.insert(k, v);
                    }
                }
                Some("grid") => {
                    check_keys(props, GRID_KEYS, "grid")?;
                    cfg.grid = Some(props.clone());
                }
                Some(other) => return Err(usage(format!("config: unknown section [{other}]"))),
            }
        }
        Ok(cfg)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.run.get(key)
    }

    /// Fills unset `slot` from the file value under `key`.
    fn fill<T>(&self, slot: &mut Option<T>, key: &str, parse: impl Fn(&str) -> Result<T, String>) -> anyhow::Result<()> {
        if slot.is_none() {
            if let Some(raw) = self.get(key) {
                *slot = Some(parse(raw.trim()).map_err(|e| usage(format!("config key '{key}': {e}")))?);
            }
        }
        Ok(())
    }

    pub fn merge_input(&self, input: &mut Option<String>) -> anyhow::Result<()> {
        self.fill(input, "input", |s| Ok(s.to_string()))
    }

    pub fn merge_data(&self, d: &mut DataOpts) -> anyhow::Result<()> {
        self.merge_input(&mut d.input)?;
        self.fill(&mut d.format, "format", enum_value::<FormatArg>)?;
        self.fill(&mut d.scale_k, "scale_k", from_str)
    }

    pub fn merge_test_frac(&self, t: &mut Option<f64>) -> anyhow::Result<()> {
        self.fill(t, "test_frac", from_str)
    }

    pub fn merge_model(&self, m: &mut ModelOpts) -> anyhow::Result<()> {
        if m.model.is_empty() {
            if let Some(raw) = self.get("model") {
                m.model = list(raw, enum_value::<ModelArg>).map_err(|e| usage(format!("config key 'model': {e}")))?;
            }
        }
        self.fill(&mut m.law, "law", enum_value::<LawArg>)?;
        self.fill(&mut m.ranks, "ranks", parse_ranks)?;
        self.fill(&mut m.norm_factor, "norm_factor", from_str)?;
        self.fill(&mut m.l2, "l2", from_str)?;
        self.fill(&mut m.seed, "seed", from_str)?;
        self.fill(&mut m.max_iters, "max_iters", from_str)?;
        self.fill(&mut m.tol, "tol", from_str)
    }

    pub fn merge_eval(&self, e: &mut EvalOpts) -> anyhow::Result<()> {
        self.fill(&mut e.context, "context", enum_value::<ContextArg>)?;
        self.fill(&mut e.topn, "topn", from_str)?;
        self.fill(&mut e.threshold, "threshold", from_str)?;
        self.fill(&mut e.stage, "stage", enum_value::<StageArg>)
    }

    pub fn merge_out(&self, out: &mut Option<std::path::PathBuf>) -> anyhow::Result<()> {
        self.fill(out, "out", |s| Ok(s.into()))
    }

    /// Applies `[grid]` overrides to `grid`.
    pub fn apply_grid(&self, grid: &mut GridSpec) -> anyhow::Result<()> {
        let Some(g) = &self.grid else { return Ok(()) };
        let field = |key: &str| g.get(key).map(str::trim);
        if let Some(v) = field("norm_factors") {
            grid.normalization_factors = list(v, from_str).map_err(grid_err("norm_factors"))?;
        }
        if let Some(v) = field("ranks") {
            grid.rank_grid = list(v, from_str).map_err(grid_err("ranks"))?;
        }
        if let Some(v) = field("rating_ranks") {
            grid.rating_ranks = list(v, from_str).map_err(grid_err("rating_ranks"))?;
        }
        if let Some(v) = field("l2") {
            grid.l2_grid = list(v, from_str).map_err(grid_err("l2"))?;
        }
        if let Some(v) = field("laws") {
            grid.laws = list(v, |s| LawKind::from_str(s).map(Into::into).map_err(|e| e.to_string())).map_err(grid_err("laws"))?;
        }
        if let Some(v) = field("contexts") {
            grid.contexts = list(v, |s| {
                let name = ContextName::from_str(s).map_err(|e| e.to_string())?;
                ContextAggregation::named(name, 5).map_err(|e| e.to_string())
            })
            .map_err(grid_err("contexts"))?;
        }
        Ok(())
    }
}

fn grid_err(key: &'static str) -> impl Fn(String) -> anyhow::Error {
    move |e| usage(format!("config key 'grid.{key}': {e}"))
}

fn check_keys(props: &Properties, allowed: &[&str], section: &str) -> anyhow::Result<()> {
    for (k, _) in props.iter() {
        if !allowed.contains(&k) {
            return Err(usage(format!("config: unknown key '{k}' in [{section}]")));
        }
    }
    Ok(())
}

fn from_str<T: FromStr>(s: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    s.parse().map_err(|e: T::Err| format!("'{s}': {e}"))
}

fn enum_value<T: ValueEnum>(s: &str) -> Result<T, String> {
    T::from_str(s, false)
}

fn list<T>(s: &str, parse: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    let items: Vec<T> = s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(parse).collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err("empty list".to_string());
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn load(text: &str) -> anyhow::Result<FileConfig> {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        FileConfig::load(Some(f.path()))
    }

    #[test]
    fn flags_override_file_values() {
        let cfg = load("[run]\nlaw = sigmoid\ntopn = 20\nmodel = coffee, latte\n").unwrap();
        let mut m = ModelOpts { law: Some(LawArg::Arctan), ..Default::default() };
        cfg.merge_model(&mut m).unwrap();
        assert_eq!(m.law, Some(LawArg::Arctan));
        assert_eq!(m.model, vec![ModelArg::Coffee, ModelArg::Latte]);
        let mut e = EvalOpts::default();
        cfg.merge_eval(&mut e).unwrap();
        assert_eq!(e.topn, Some(20));
    }

    #[test]
    fn grid_section_overrides_axes() {
        let cfg = load("[grid]\nnorm_factors = 0.5,1\nranks = 4, 8\nrating_ranks = 2\nl2 = 10\nlaws = linear,arctan\ncontexts = only5,345m21\n").unwrap();
        let mut g = GridSpec::default();
        cfg.apply_grid(&mut g).unwrap();
        assert_eq!(g.normalization_factors, vec![0.5, 1.0]);
        assert_eq!(g.rank_grid, vec![4, 8]);
        assert_eq!(g.rating_ranks, vec![2]);
        assert_eq!(g.l2_grid, vec![10.0]);
        assert_eq!(g.laws.len(), 2);
        assert_eq!(g.contexts[1].name, Some(ContextName::ThreeFourFiveMinusTwoOne));
    }

    #[test]
    fn bad_files_are_usage_errors() {
        for text in ["[run]\nlaw = foo\n", "[run]\nbogus = 1\n", "[other]\nx = 1\n", "[grid]\nranks = a\n"] {
            let err = load(text).and_then(|c| {
                c.merge_model(&mut ModelOpts::default())?;
                c.apply_grid(&mut GridSpec::default())
            });
            assert!(err.unwrap_err().is::<UsageError>(), "{text}");
        }
    }
}
