//! The study comparison battery.
//!
//! Subject-level scores are phase means (baseline, evaluation) or training
//! set means (per amplitude, per wavelength). On those:
//!
//! - within each group, baseline vs evaluation: paired t (both tasks)
//! - between groups at baseline and at evaluation: one-way ANOVA, then
//!   pairwise Student t with Holm-Šidák adjustment
//! - between groups for every amplitude set and every wavelength set: same
//! - within each group across amplitudes and across wavelengths:
//!   repeated-measures ANOVA, then pairwise paired t with Holm-Šidák

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::hypothesis::{holm_sidak, independent_t, one_way_anova, paired_t, rm_anova, TestResult, ALPHA};
use super::StatsError;
use crate::feedback::FeedbackMode;
use crate::metrics::{percent_change, set_mean, Grouping, Phase, SummaryRow, Task};
use crate::session::plan::session_layout;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostHoc {
    pub a: String,
    pub b: String,
    pub test: TestResult,
    pub p_adjusted: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WithinGroupChange {
    pub group: FeedbackMode,
    pub task: Task,
    pub baseline_mean: f64,
    pub evaluation_mean: f64,
    pub percent_change: Option<f64>,
    pub test: Option<TestResult>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetweenGroups {
    pub label: String,
    pub group_means: Vec<(FeedbackMode, f64)>,
    pub anova: Option<TestResult>,
    pub post_hoc: Vec<PostHoc>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WithinGroupLevels {
    pub group: FeedbackMode,
    pub grouping: Grouping,
    pub level_means: Vec<(f64, f64)>,
    pub rm_anova: Option<TestResult>,
    pub post_hoc: Vec<PostHoc>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub alpha: f64,
    pub subjects: BTreeMap<String, FeedbackMode>,
    pub within_group: Vec<WithinGroupChange>,
    pub between_group: Vec<BetweenGroups>,
    pub training_sets: Vec<BetweenGroups>,
    pub within_training: Vec<WithinGroupLevels>,
}

struct Subject {
    group: FeedbackMode,
    cells: BTreeMap<(Task, Phase, usize), f64>,
}

impl Subject {
    fn phase_mean(&self, task: Task, phase: Phase) -> f64 {
        let v: Vec<f64> =
            self.cells.iter().filter(|((t, p, _), _)| *t == task && *p == phase).map(|(_, v)| *v).collect();
        v.iter().sum::<f64>() / v.len() as f64
    }

    fn set_means(&self, grouping: Grouping) -> [f64; 3] {
        let mut e = [None; 9];
        for i in 1..=9 {
            e[i - 1] = self.cells.get(&(Task::PathFollowing, Phase::Training, i)).copied();
        }
        set_mean(&e, grouping).expect("completeness checked")
    }
}

fn collect(rows: &[SummaryRow]) -> Result<BTreeMap<String, Subject>, StatsError> {
    let mut subjects: BTreeMap<String, Subject> = BTreeMap::new();
    let mut problems = Vec::new();
    for r in rows {
        let s = subjects.entry(r.subject.clone()).or_insert(Subject { group: r.group, cells: BTreeMap::new() });
        if s.group != r.group {
            problems.push(format!("subject {} listed in more than one group", r.subject));
        }
        s.cells.insert((r.task, r.phase, r.session), r.error);
    }
    let layout = session_layout();
    for (id, s) in &subjects {
        for (task, phase, idx) in &layout {
            if !s.cells.contains_key(&(*task, *phase, *idx)) {
                problems.push(format!("{id}: missing {} {} session {idx}", task.as_str(), phase.as_str()));
            }
        }
    }
    let mut per_group: BTreeMap<FeedbackMode, usize> = BTreeMap::new();
    for s in subjects.values() {
        *per_group.entry(s.group).or_default() += 1;
    }
    if per_group.len() < 2 {
        problems.push(format!("need at least 2 groups, found {}", per_group.len()));
    }
    for (g, n) in &per_group {
        if *n < 2 {
            problems.push(format!("group {} has {n} subject(s), need at least 2", g.as_str()));
        }
    }
    if problems.is_empty() {
        Ok(subjects)
    } else {
        Err(StatsError::IncompleteStudy(problems))
    }
}

fn groups_in(subjects: &BTreeMap<String, Subject>) -> Vec<FeedbackMode> {
    FeedbackMode::ALL.into_iter().filter(|g| subjects.values().any(|s| s.group == *g)).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn post_hoc(labels: &[String], pairs: Vec<(usize, usize, Result<TestResult, StatsError>)>) -> (Vec<PostHoc>, Option<String>) {
    let mut ok = Vec::new();
    let mut notes = Vec::new();
    for (i, j, r) in pairs {
        match r {
            Ok(t) => ok.push((i, j, t)),
            Err(e) => notes.push(format!("{} vs {}: {e}", labels[i], labels[j])),
        }
    }
    let ps: Vec<f64> = ok.iter().map(|(_, _, t)| t.p_value).collect();
    let adj = holm_sidak(&ps).expect("p-values in range");
    let out = ok
        .into_iter()
        .zip(adj)
        .map(|((i, j, test), p_adjusted)| PostHoc {
            a: labels[i].clone(),
            b: labels[j].clone(),
            test,
            p_adjusted,
            significant: p_adjusted < ALPHA,
        })
        .collect();
    (out, if notes.is_empty() { None } else { Some(notes.join("; ")) })
}

fn between(label: String, groups: &[FeedbackMode], samples: &[Vec<f64>]) -> BetweenGroups {
    let slices: Vec<&[f64]> = samples.iter().map(Vec::as_slice).collect();
    let group_means = groups.iter().zip(samples).map(|(g, s)| (*g, mean(s))).collect();
    let labels: Vec<String> = groups.iter().map(|g| g.as_str().to_string()).collect();
    let (anova, mut note) = match one_way_anova(&slices) {
        Ok(t) => (Some(t), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let mut pairs = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            pairs.push((i, j, independent_t(&samples[i], &samples[j])));
        }
    }
    let (post_hoc, ph_note) = post_hoc(&labels, pairs);
    if note.is_none() {
        note = ph_note;
    }
    BetweenGroups { label, group_means, anova, post_hoc, note }
}

/// Run the full comparison battery over per-session results.
pub fn analyze_study(rows: &[SummaryRow]) -> Result<StudyReport, StatsError> {
    let subjects = collect(rows)?;
    let groups = groups_in(&subjects);
    let members = |g: FeedbackMode| subjects.values().filter(move |s| s.group == g);

    let mut within_group = Vec::new();
    for &g in &groups {
        for task in [Task::PathFollowing, Task::Waypoint] {
            let base: Vec<f64> = members(g).map(|s| s.phase_mean(task, Phase::Baseline)).collect();
            let eval: Vec<f64> = members(g).map(|s| s.phase_mean(task, Phase::Evaluation)).collect();
            let (bm, em) = (mean(&base), mean(&eval));
            let (test, note) = match paired_t(&base, &eval) {
                Ok(t) => (Some(t), None),
                Err(e) => (None, Some(e.to_string())),
            };
            within_group.push(WithinGroupChange {
                group: g,
                task,
                baseline_mean: bm,
                evaluation_mean: em,
                percent_change: percent_change(bm, em).ok(),
                test,
                note,
            });
        }
    }

    let mut between_group = Vec::new();
    for (task, phase) in [
        (Task::PathFollowing, Phase::Baseline),
        (Task::PathFollowing, Phase::Evaluation),
        (Task::Waypoint, Phase::Baseline),
        (Task::Waypoint, Phase::Evaluation),
    ] {
        let samples: Vec<Vec<f64>> =
            groups.iter().map(|&g| members(g).map(|s| s.phase_mean(task, phase)).collect()).collect();
        between_group.push(between(format!("{} {}", task.as_str(), phase.as_str()), &groups, &samples));
    }

    let mut training_sets = Vec::new();
    for grouping in [Grouping::Amplitude, Grouping::Wavelength] {
        for (level_i, level) in grouping.levels().iter().enumerate() {
            let samples: Vec<Vec<f64>> =
                groups.iter().map(|&g| members(g).map(|s| s.set_means(grouping)[level_i]).collect()).collect();
            let name = match grouping {
                Grouping::Amplitude => "amplitude",
                Grouping::Wavelength => "wavelength",
            };
            training_sets.push(between(format!("training {name} {level} m"), &groups, &samples));
        }
    }

    let mut within_training = Vec::new();
    for &g in &groups {
        for grouping in [Grouping::Amplitude, Grouping::Wavelength] {
            let matrix: Vec<Vec<f64>> = members(g).map(|s| s.set_means(grouping).to_vec()).collect();
            let levels = grouping.levels();
            let level_means =
                (0..3).map(|j| (levels[j], mean(&matrix.iter().map(|r| r[j]).collect::<Vec<_>>()))).collect();
            let (rm, mut note) = match rm_anova(&matrix) {
                Ok(t) => (Some(t), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let labels: Vec<String> = levels.iter().map(|l| format!("{l} m")).collect();
            let col = |j: usize| matrix.iter().map(|r| r[j]).collect::<Vec<f64>>();
            let pairs = vec![
                (0, 1, paired_t(&col(0), &col(1))),
                (0, 2, paired_t(&col(0), &col(2))),
                (1, 2, paired_t(&col(1), &col(2))),
            ];
            let (post_hoc, ph_note) = post_hoc(&labels, pairs);
            if note.is_none() {
                note = ph_note;
            }
            within_training.push(WithinGroupLevels { group: g, grouping, level_means, rm_anova: rm, post_hoc, note });
        }
    }

    Ok(StudyReport {
        alpha: ALPHA,
        subjects: subjects.iter().map(|(k, s)| (k.clone(), s.group)).collect(),
        within_group,
        between_group,
        training_sets,
        within_training,
    })
}

fn fmt_test(t: &Option<TestResult>) -> String {
    match t {
        Some(t) => {
            let df = match t.df {
                super::Df::Scalar(d) => format!("{d}"),
                super::Df::Pair(a, b) => format!("{a},{b}"),
            };
            format!("stat={:>9.4} df=({df}) p={:.4}{}", t.statistic, t.p_value, if t.significant { " *" } else { "" })
        }
        None => "n/a".to_string(),
    }
}

impl StudyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text tables of every comparison.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "subjects: {}   alpha = {}", self.subjects.len(), self.alpha);
        let _ = writeln!(s, "\n== baseline vs evaluation (paired t) ==");
        for w in &self.within_group {
            let _ = writeln!(
                s,
                "{:<7} {:<15} base={:.4} eval={:.4} change={:>8}  {}",
                w.group.as_str(),
                w.task.as_str(),
                w.baseline_mean,
                w.evaluation_mean,
                w.percent_change.map_or("n/a".into(), |p| format!("{p:.2}%")),
                fmt_test(&w.test)
            );
        }
        for (title, block) in
            [("between groups (one-way ANOVA)", &self.between_group), ("training sets between groups", &self.training_sets)]
        {
            let _ = writeln!(s, "\n== {title} ==");
            for b in block {
                let means: Vec<String> = b.group_means.iter().map(|(g, m)| format!("{}={m:.4}", g.as_str())).collect();
                let _ = writeln!(s, "{:<34} {}  [{}]", b.label, fmt_test(&b.anova), means.join(" "));
                for p in &b.post_hoc {
                    let _ = writeln!(s, "    {} vs {}: t={:.4} p_adj={:.4}{}", p.a, p.b, p.test.statistic, p.p_adjusted, if p.significant { " *" } else { "" });
                }
            }
        }
        let _ = writeln!(s, "\n== within groups across training levels (rm-ANOVA) ==");
        for w in &self.within_training {
            let means: Vec<String> = w.level_means.iter().map(|(l, m)| format!("{l}m={m:.4}")).collect();
            let _ = writeln!(s, "{:<7} {:<10} {}  [{}]", w.group.as_str(), format!("{:?}", w.grouping).to_lowercase(), fmt_test(&w.rm_anova), means.join(" "));
            for p in &w.post_hoc {
                let _ = writeln!(s, "    {} vs {}: t={:.4} p_adj={:.4}{}", p.a, p.b, p.test.statistic, p.p_adjusted, if p.significant { " *" } else { "" });
            }
        }
        s
    }
}
