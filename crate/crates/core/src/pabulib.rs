//! Parsing of pabulib-format participatory budgeting election files.
//!
//! The pabulib text format has three sections introduced by the bare lines
//! `META`, `PROJECTS` and `VOTES`. Each section starts with a
//! semicolon-separated header row naming its columns; subsequent rows carry
//! semicolon-separated values. META rows are `key;value` pairs and must
//! include `budget` and `num_projects`. PROJECTS must include `project_id`
//! and `cost`; VOTES must include `voter_id` and `vote` (comma-separated
//! approved project ids). UTF-8 with LF or CRLF line endings.
//!
//! District and year are read from the META keys `district`/`subunit`/`unit`
//! and `year`/`instance` respectively (first present wins), matching how real
//! pabulib exports label their instances.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Money amounts are integers in the file's native currency unit; knapsack
/// feasibility checks stay exact.
pub type Money = u64;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("missing required section `{0}`")]
    MissingSection(&'static str),
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("ballot `{voter}` approves unknown project id `{project}`")]
    UnknownProjectReference { voter: String, project: String },
    #[error("budget must be a positive integer, got `{0}`")]
    NonPositiveBudget(String),
    #[error("duplicate project id `{0}`")]
    DuplicateProject(String),
    #[error("META declares num_projects={declared} but PROJECTS has {actual} rows")]
    ProjectCountMismatch { declared: usize, actual: usize },
    #[error("no project fits within the budget")]
    NoAffordableProject,
    #[error("documents mix districts `{0}` and `{1}`")]
    MixedDistricts(String, String),
    #[error("duplicate year {0} in district history")]
    DuplicateYear(i32),
    #[error("no documents supplied")]
    EmptyHistory,
}

/// One project put up for voting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Project {
    pub id: String,
    pub cost: Money,
    /// Attribute tags (amenity categories and beneficiary groups), merged
    /// from the `category` and `target` columns: comma-split, trimmed,
    /// lowercased. May be empty, never absent.
    pub attributes: BTreeSet<String>,
    /// Number of ballots approving this project; computed from VOTES.
    pub vote_count: u64,
    /// Whether this project won in the historical record (`selected` column).
    pub selected: bool,
}

/// One voter's approval ballot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ballot {
    pub voter_id: String,
    /// Non-empty set of approved project ids.
    pub approved: BTreeSet<String>,
}

/// A single district-year election: projects, budget, approval ballots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElectionInstance {
    pub district: String,
    pub year: i32,
    pub budget: Money,
    pub projects: Vec<Project>,
    pub ballots: Vec<Ballot>,
}

/// Multi-year election record of one district, ordered by year.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistrictHistory {
    pub district: String,
    pub instances: Vec<ElectionInstance>,
}

impl ElectionInstance {
    pub fn project(&self, id: &str) -> Option<&Project> {
        self.projects.iter().find(|p| p.id == id)
    }

    /// Serializes back to pabulib layout. Attributes are written under the
    /// `category` column; re-parsing yields an instance equal to `self`.
    pub fn to_pabulib(&self) -> String {
        let mut out = String::new();
        out.push_str("META\nkey;value\n");
        out.push_str(&format!("district;{}\n", self.district));
        out.push_str(&format!("year;{}\n", self.year));
        out.push_str(&format!("budget;{}\n", self.budget));
        out.push_str(&format!("num_projects;{}\n", self.projects.len()));
        out.push_str("PROJECTS\nproject_id;cost;category;selected\n");
        for p in &self.projects {
            let tags: Vec<&str> = p.attributes.iter().map(|s| s.as_str()).collect();
            out.push_str(&format!(
                "{};{};{};{}\n",
                p.id,
                p.cost,
                tags.join(","),
                if p.selected { 1 } else { 0 }
            ));
        }
        out.push_str("VOTES\nvoter_id;vote\n");
        for b in &self.ballots {
            let ids: Vec<&str> = b.approved.iter().map(|s| s.as_str()).collect();
            out.push_str(&format!("{};{}\n", b.voter_id, ids.join(",")));
        }
        out
    }
}

impl DistrictHistory {
    /// The most recent instance; histories are never empty.
    pub fn latest(&self) -> &ElectionInstance {
        self.instances.last().expect("history is non-empty")
    }

    pub fn years(&self) -> usize {
        self.instances.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Section {
    Meta,
    Projects,
    Votes,
}

/// Parses a pabulib document into a validated [`ElectionInstance`].
///
/// Per-project `vote_count` is computed from the VOTES section; the
/// `selected` flag is read from the projects table when present, else false.
pub fn parse_election(text: &str) -> Result<ElectionInstance, ParseError> {
    let mut meta: BTreeMap<String, String> = BTreeMap::new();
    let mut project_header: Option<Vec<String>> = None;
    let mut project_rows: Vec<(usize, Vec<String>)> = Vec::new();
    let mut vote_header: Option<Vec<String>> = None;
    let mut vote_rows: Vec<(usize, Vec<String>)> = Vec::new();
    let mut seen = BTreeSet::new();

    let mut section: Option<Section> = None;
    let mut header_pending = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        match line.trim() {
            "META" => {
                section = Some(Section::Meta);
                seen.insert(Section::Meta);
                header_pending = true;
                continue;
            }
            "PROJECTS" => {
                section = Some(Section::Projects);
                seen.insert(Section::Projects);
                header_pending = true;
                continue;
            }
            "VOTES" => {
                section = Some(Section::Votes);
                seen.insert(Section::Votes);
                header_pending = true;
                continue;
            }
            _ => {}
        }
        let section = section.ok_or_else(|| ParseError::MalformedRow {
            line: line_no,
            reason: "content before the first section marker".into(),
        })?;
        if header_pending {
            header_pending = false;
            let cols: Vec<String> = line.split(';').map(|c| c.trim().to_string()).collect();
            match section {
                Section::Meta => {
                    if cols.len() != 2 || cols[0] != "key" || cols[1] != "value" {
                        return Err(ParseError::MalformedRow {
                            line: line_no,
                            reason: "META header must be `key;value`".into(),
                        });
                    }
                }
                Section::Projects => project_header = Some(cols),
                Section::Votes => vote_header = Some(cols),
            }
            continue;
        }
        match section {
            Section::Meta => {
                // META values may themselves contain semicolons; split once.
                let (key, value) = line.split_once(';').ok_or(ParseError::MalformedRow {
                    line: line_no,
                    reason: "META row is not a key;value pair".into(),
                })?;
                meta.insert(key.trim().to_string(), value.trim().to_string());
            }
            Section::Projects => {
                project_rows.push((line_no, split_row(line)));
            }
            Section::Votes => {
                vote_rows.push((line_no, split_row(line)));
            }
        }
    }

    for (marker, name) in [
        (Section::Meta, "META"),
        (Section::Projects, "PROJECTS"),
        (Section::Votes, "VOTES"),
    ] {
        if !seen.contains(&marker) {
            return Err(ParseError::MissingSection(name));
        }
    }

    let budget_raw = meta
        .get("budget")
        .ok_or(ParseError::MissingSection("META budget"))?;
    let budget_val: i64 = budget_raw
        .parse()
        .map_err(|_| ParseError::NonPositiveBudget(budget_raw.clone()))?;
    if budget_val <= 0 {
        return Err(ParseError::NonPositiveBudget(budget_raw.clone()));
    }
    let budget = budget_val as Money;
    let declared: usize = meta
        .get("num_projects")
        .ok_or(ParseError::MissingSection("META num_projects"))?
        .parse()
        .map_err(|_| ParseError::MalformedRow {
            line: 0,
            reason: "num_projects is not an integer".into(),
        })?;

    let district = ["district", "subunit", "unit"]
        .iter()
        .find_map(|k| meta.get(*k))
        .cloned()
        .unwrap_or_default();
    let year = ["year", "instance"]
        .iter()
        .find_map(|k| meta.get(*k))
        .and_then(|v| v.trim().parse::<i32>().ok())
        .unwrap_or(0);

    let header = project_header.ok_or(ParseError::MissingSection("PROJECTS header"))?;
    let col = |name: &str| header.iter().position(|c| c == name);
    let id_col = col("project_id").ok_or(ParseError::MissingSection("PROJECTS project_id"))?;
    let cost_col = col("cost").ok_or(ParseError::MissingSection("PROJECTS cost"))?;
    let category_col = col("category");
    let target_col = col("target");
    let selected_col = col("selected");

    let mut projects = Vec::with_capacity(project_rows.len());
    let mut ids = BTreeSet::new();
    for (line, cells) in &project_rows {
        if cells.len() != header.len() {
            return Err(ParseError::MalformedRow {
                line: *line,
                reason: format!("expected {} columns, found {}", header.len(), cells.len()),
            });
        }
        let id = cells[id_col].trim().to_string();
        if id.is_empty() {
            return Err(ParseError::MalformedRow {
                line: *line,
                reason: "empty project_id".into(),
            });
        }
        if !ids.insert(id.clone()) {
            return Err(ParseError::DuplicateProject(id));
        }
        let cost: Money = cells[cost_col]
            .trim()
            .parse()
            .map_err(|_| ParseError::MalformedRow {
                line: *line,
                reason: format!("cost `{}` is not a non-negative integer", cells[cost_col]),
            })?;
        let mut attributes = BTreeSet::new();
        for idx in [category_col, target_col].into_iter().flatten() {
            attributes.extend(split_tags(&cells[idx]));
        }
        // Optional fields keep defaults when unparseable.
        let selected = selected_col.is_some_and(|i| cells[i].trim() == "1");
        projects.push(Project {
            id,
            cost,
            attributes,
            vote_count: 0,
            selected,
        });
    }

    if declared != projects.len() {
        return Err(ParseError::ProjectCountMismatch {
            declared,
            actual: projects.len(),
        });
    }
    if !projects.iter().any(|p| p.cost <= budget) {
        return Err(ParseError::NoAffordableProject);
    }

    let header = vote_header.ok_or(ParseError::MissingSection("VOTES header"))?;
    let col = |name: &str| header.iter().position(|c| c == name);
    let voter_col = col("voter_id").ok_or(ParseError::MissingSection("VOTES voter_id"))?;
    let vote_col = col("vote").ok_or(ParseError::MissingSection("VOTES vote"))?;

    let mut ballots = Vec::with_capacity(vote_rows.len());
    for (line, cells) in &vote_rows {
        if cells.len() != header.len() {
            return Err(ParseError::MalformedRow {
                line: *line,
                reason: format!("expected {} columns, found {}", header.len(), cells.len()),
            });
        }
        let voter_id = cells[voter_col].trim().to_string();
        let approved: BTreeSet<String> = cells[vote_col]
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if approved.is_empty() {
            return Err(ParseError::MalformedRow {
                line: *line,
                reason: format!("ballot `{voter_id}` approves no projects"),
            });
        }
        for id in &approved {
            if !ids.contains(id) {
                return Err(ParseError::UnknownProjectReference {
                    voter: voter_id,
                    project: id.clone(),
                });
            }
        }
        ballots.push(Ballot { voter_id, approved });
    }

    for project in &mut projects {
        project.vote_count = ballots
            .iter()
            .filter(|b| b.approved.contains(&project.id))
            .count() as u64;
    }

    Ok(ElectionInstance {
        district,
        year,
        budget,
        projects,
        ballots,
    })
}

/// Parses yearly documents of one district into a [`DistrictHistory`] with
/// instances sorted by ascending year.
pub fn load_district_history<S: AsRef<str>>(
    documents: &[S],
) -> Result<DistrictHistory, ParseError> {
    if documents.is_empty() {
        return Err(ParseError::EmptyHistory);
    }
    let mut instances = documents
        .iter()
        .map(|d| parse_election(d.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    let district = instances[0].district.clone();
    for inst in &instances {
        if inst.district != district {
            return Err(ParseError::MixedDistricts(
                district,
                inst.district.clone(),
            ));
        }
    }
    instances.sort_by_key(|i| i.year);
    for pair in instances.windows(2) {
        if pair[0].year == pair[1].year {
            return Err(ParseError::DuplicateYear(pair[0].year));
        }
    }
    Ok(DistrictHistory {
        district,
        instances,
    })
}

fn split_row(line: &str) -> Vec<String> {
    line.split(';').map(|c| c.to_string()).collect()
}

fn split_tags(cell: &str) -> impl Iterator<Item = String> + '_ {
    cell.split(',')
        .map(|t| t.trim().to_lowercase())
        .filter(|t| !t.is_empty())
}
