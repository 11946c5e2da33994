//! Case repository: the solved puzzles with their card images, stored as a
//! JSON Lines file plus a directory of PGM images. Feature and latent index
//! vectors are persisted inline on each record.

use crate::codec::{render, CardImage, PgmError};
use crate::domain::{solve_restricted, validate_answer, Puzzle, Solution, Verdict};
use crate::features::extract_features;
use crate::network::LatentModel;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const REPO_FILE: &str = "repo.jsonl";
pub const IMAGE_DIR: &str = "images";

/// One stored case. `image_path` is relative to the repository directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub id: String,
    #[serde(rename = "puzzle_text")]
    pub puzzle: Puzzle,
    pub image_path: String,
    pub solutions: Vec<Solution>,
    pub results: Vec<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<Vec<f64>>,
}

#[derive(Error, Debug)]
pub enum RepoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("image error: {0}")]
    Image(#[from] PgmError),
    #[error("malformed record on line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("missing image file {0}")]
    MissingImageFile(PathBuf),
    #[error("case {0} already stored")]
    DuplicateId(String),
    #[error("puzzle {0} has no family solution")]
    UnsolvedCase(String),
    #[error("repository has a latent index but no model was supplied")]
    IndexModelMissing,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RepoError + '_ {
    move |source| RepoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug)]
pub struct Repository {
    root: PathBuf,
    cases: Vec<Case>,
    by_id: HashMap<String, usize>,
}

impl Repository {
    /// Build the full repository under `root`: every solvable puzzle gets a
    /// rendered card image, validated solutions, and a feature vector.
    pub fn build(root: &Path) -> Result<Repository, RepoError> {
        let image_dir = root.join(IMAGE_DIR);
        std::fs::create_dir_all(&image_dir).map_err(io_err(&image_dir))?;
        let mut repo = Repository {
            root: root.to_path_buf(),
            cases: Vec::new(),
            by_id: HashMap::new(),
        };
        for puzzle in crate::domain::enumerate_puzzles() {
            let solutions = solve_restricted(&puzzle);
            if solutions.is_empty() {
                continue;
            }
            repo.push_case(puzzle, solutions, None)?;
        }
        repo.save()?;
        Ok(repo)
    }

    fn push_case(
        &mut self,
        puzzle: Puzzle,
        solutions: Vec<Solution>,
        model: Option<&LatentModel>,
    ) -> Result<(), RepoError> {
        let id = puzzle.id();
        let image_rel = format!("{}/{}.pgm", IMAGE_DIR, id);
        let image_abs = self.root.join(&image_rel);
        render(&puzzle).write_pgm(&image_abs)?;
        let results = solutions
            .iter()
            .map(|s| validate_answer(&puzzle, &s.expression))
            .collect();
        let features = extract_features(&puzzle).to_vec();
        let latent = model.map(|m| m.latent(&crate::features::model_input(&puzzle, &extract_features(&puzzle))));
        let case = Case {
            id: id.clone(),
            puzzle,
            image_path: image_rel,
            solutions,
            results,
            features: Some(features),
            latent,
        };
        self.by_id.insert(id, self.cases.len());
        self.cases.push(case);
        Ok(())
    }

    /// Add one more solved puzzle. Fails on duplicates and on puzzles with
    /// no family solution. When the repository already carries a latent
    /// index, a model is required to keep that index complete.
    pub fn retain(
        &mut self,
        puzzle: Puzzle,
        model: Option<&LatentModel>,
    ) -> Result<&Case, RepoError> {
        let id = puzzle.id();
        if self.by_id.contains_key(&id) {
            return Err(RepoError::DuplicateId(id));
        }
        let solutions = solve_restricted(&puzzle);
        if solutions.is_empty() {
            return Err(RepoError::UnsolvedCase(id));
        }
        let has_latent_index = self.cases.iter().any(|c| c.latent.is_some());
        if has_latent_index && model.is_none() {
            return Err(RepoError::IndexModelMissing);
        }
        self.push_case(puzzle, solutions, model)?;
        Ok(self.cases.last().unwrap())
    }

    /// Compute (or refresh) the latent index with the given model.
    pub fn attach_latent_index(&mut self, model: &LatentModel) {
        for case in &mut self.cases {
            let f = extract_features(&case.puzzle);
            let input = crate::features::model_input(&case.puzzle, &f);
            case.latent = Some(model.latent(&input));
        }
    }

    pub fn save(&self) -> Result<(), RepoError> {
        let path = self.root.join(REPO_FILE);
        let mut file = std::fs::File::create(&path).map_err(io_err(&path))?;
        let mut out = String::new();
        for case in &self.cases {
            out.push_str(&serde_json::to_string(case).expect("case serializes"));
            out.push('\n');
        }
        file.write_all(out.as_bytes()).map_err(io_err(&path))?;
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Repository, RepoError> {
        let path = root.join(REPO_FILE);
        let file = std::fs::File::open(&path).map_err(io_err(&path))?;
        let mut cases = Vec::new();
        let mut by_id = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            let case: Case =
                serde_json::from_str(&line).map_err(|e| RepoError::MalformedRecord {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            let image_abs = root.join(&case.image_path);
            if !image_abs.is_file() {
                return Err(RepoError::MissingImageFile(image_abs));
            }
            if by_id.insert(case.id.clone(), cases.len()).is_some() {
                return Err(RepoError::DuplicateId(case.id));
            }
            cases.push(case);
        }
        Ok(Repository {
            root: root.to_path_buf(),
            cases,
            by_id,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn cases(&self) -> &[Case] {
        &self.cases
    }

    pub fn get(&self, id: &str) -> Option<&Case> {
        self.by_id.get(id).map(|&i| &self.cases[i])
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn image(&self, case: &Case) -> Result<CardImage, RepoError> {
        Ok(CardImage::read_pgm(&self.root.join(&case.image_path))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::LatentModel;

    fn tiny_repo(dir: &Path) -> Repository {
        // hand-picked solvable puzzles instead of the full build
        let mut repo = Repository {
            root: dir.to_path_buf(),
            cases: Vec::new(),
            by_id: HashMap::new(),
        };
        std::fs::create_dir_all(dir.join(IMAGE_DIR)).unwrap();
        for nums in [[4, 5, 9, 10], [1, 3, 6, 7], [1, 3, 7, 12]] {
            let p = Puzzle::new(nums).unwrap();
            let sols = solve_restricted(&p);
            assert!(!sols.is_empty());
            repo.push_case(p, sols, None).unwrap();
        }
        repo.save().unwrap();
        repo
    }

    #[test]
    fn save_load_round_trip_preserves_fields() {
        let dir = tempfile::tempdir().unwrap();
        let mut repo = tiny_repo(dir.path());
        let model = LatentModel::init(4);
        repo.attach_latent_index(&model);
        repo.save().unwrap();

        let back = Repository::load(dir.path()).unwrap();
        assert_eq!(back.cases(), repo.cases());
    }

    #[test]
    fn stored_results_are_all_correct() {
        let dir = tempfile::tempdir().unwrap();
        let repo = tiny_repo(dir.path());
        for case in repo.cases() {
            assert_eq!(case.results.len(), case.solutions.len());
            assert!(case.results.iter().all(|v| *v == Verdict::Correct));
        }
    }

    #[test]
    fn retain_rejects_duplicates_and_unsolved() {
        let dir = tempfile::tempdir().unwrap();
        let mut repo = tiny_repo(dir.path());
        let dup = Puzzle::new([4, 5, 9, 10]).unwrap();
        assert!(matches!(
            repo.retain(dup, None),
            Err(RepoError::DuplicateId(_))
        ));
        let unsolved = Puzzle::new([1, 1, 1, 1]).unwrap();
        assert!(matches!(
            repo.retain(unsolved, None),
            Err(RepoError::UnsolvedCase(_))
        ));
    }

    #[test]
    fn retain_adds_case_with_image_and_features() {
        let dir = tempfile::tempdir().unwrap();
        let mut repo = tiny_repo(dir.path());
        let p = Puzzle::new([1, 1, 2, 7]).unwrap();
        let before = repo.len();
        let case = repo.retain(p, None).unwrap();
        assert_eq!(case.puzzle, p);
        assert!(case.features.is_some());
        assert!(dir.path().join(&case.image_path).is_file());
        assert_eq!(repo.len(), before + 1);
    }

    #[test]
    fn retain_requires_model_once_latent_index_exists() {
        let dir = tempfile::tempdir().unwrap();
        let mut repo = tiny_repo(dir.path());
        let model = LatentModel::init(8);
        repo.attach_latent_index(&model);
        let p = Puzzle::new([1, 1, 2, 7]).unwrap();
        assert!(matches!(
            repo.retain(p, None),
            Err(RepoError::IndexModelMissing)
        ));
        let case = repo.retain(p, Some(&model)).unwrap();
        assert_eq!(case.latent.as_ref().unwrap().len(), 64);
    }

    #[test]
    fn load_rejects_malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        tiny_repo(dir.path());
        let path = dir.path().join(REPO_FILE);
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{not json\n");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            Repository::load(dir.path()),
            Err(RepoError::MalformedRecord { line: 4, .. })
        ));
    }

    #[test]
    fn load_rejects_missing_images() {
        let dir = tempfile::tempdir().unwrap();
        let repo = tiny_repo(dir.path());
        let image = dir.path().join(&repo.cases()[1].image_path);
        std::fs::remove_file(image).unwrap();
        assert!(matches!(
            Repository::load(dir.path()),
            Err(RepoError::MissingImageFile(_))
        ));
    }

    #[test]
    fn record_json_shape() {
        let dir = tempfile::tempdir().unwrap();
        let repo = tiny_repo(dir.path());
        let line = serde_json::to_string(&repo.cases()[0]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["id"], "04-05-09-10");
        assert_eq!(v["puzzle_text"], "4 5 9 10");
        assert_eq!(v["image_path"], "images/04-05-09-10.pgm");
        assert_eq!(v["solutions"][0]["category"], "C_4_6");
        assert_eq!(v["solutions"][0]["large_positions"], serde_json::json!([1, 4]));
        assert_eq!(v["solutions"][0]["expression"], "(10 - 4) * (9 - 5)");
        assert_eq!(v["results"][0], "Correct");
    }
}
