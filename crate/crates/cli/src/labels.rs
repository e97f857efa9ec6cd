use std::collections::BTreeSet;
use std::path::Path;

use spclt_core::dataio::load_dataset;
use spclt_core::Error;

use crate::CliResult;

/// Class names per instance, from a labelled dataset (`.ts`/`.csv`) or a
/// text file with one label per line.
pub fn load_names(path: &Path) -> CliResult<Vec<String>> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    if ext == "ts" || ext == "csv" {
        let ds = load_dataset(path)?.dataset;
        let labels = ds
            .labels
            .ok_or_else(|| Error::Format(format!("{} has no class labels", path.display())))?;
        return Ok(labels
            .iter()
            .map(|&l| match &ds.label_names {
                Some(names) => names[l].clone(),
                None => l.to_string(),
            })
            .collect());
    }
    Ok(std::fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Maps both name lists onto shared ids: numeric order when every name is an
/// integer, lexicographic otherwise.
pub fn encode_pair(a: &[String], b: &[String]) -> (Vec<usize>, Vec<usize>, Vec<String>) {
    let mut classes: Vec<String> = a.iter().chain(b).cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let numeric: Option<Vec<i64>> = classes.iter().map(|c| c.parse().ok()).collect();
    if let Some(nums) = numeric {
        let mut pairs: Vec<(i64, String)> = nums.into_iter().zip(classes).collect();
        pairs.sort();
        classes = pairs.into_iter().map(|p| p.1).collect();
    }
    let id = |s: &String| classes.iter().position(|c| c == s).expect("name in class list");
    (a.iter().map(id).collect(), b.iter().map(id).collect(), classes.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn shared_ids() {
        let (a, b, c) = encode_pair(&s(&["10", "2", "2"]), &s(&["10", "3"]));
        assert_eq!(c, s(&["2", "3", "10"]));
        assert_eq!((a, b), (vec![2, 0, 0], vec![2, 1]));
        let (a, _, c) = encode_pair(&s(&["b", "a"]), &s(&[]));
        assert_eq!((a, c), (vec![1, 0], s(&["a", "b"])));
    }
}
