//! Execution schedule and pseudocode skeleton derived from a specification.
//!
//! Equations are copied verbatim and never parsed.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::schema::{DataType, Frequency, ModelSpecification, VariableSpec};

pub const SKELETON_FILE: &str = "skeleton.txt";
pub const SCHEDULE_FILE: &str = "schedule.json";
pub const TODO_MARKER: &str = "TODO: equation not extracted";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulePhase {
    Setup,
    Tick,
    Conditional,
}

impl SchedulePhase {
    fn from_frequency(f: Frequency) -> Self {
        match f {
            Frequency::SetupOnce => SchedulePhase::Setup,
            Frequency::EveryTick | Frequency::Unknown => SchedulePhase::Tick,
            Frequency::Conditional => SchedulePhase::Conditional,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub scope: String,
    pub variable: String,
    pub phase: SchedulePhase,
    /// Execution order and `scope.variable`.
    pub order_key: (Option<u64>, String),
    pub equation: Option<String>,
    pub raw_frequency: Option<String>,
}

impl ScheduleEntry {
    pub fn qualified_name(&self) -> String {
        format!("{}.{}", self.scope, self.variable)
    }

    /// Execution order with null last, then scope, then variable.
    fn sort_cmp(&self, other: &Self) -> Ordering {
        let order = match (self.order_key.0, other.order_key.0) {
            (Some(a), Some(b)) => a.cmp(&b),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        };
        order
            .then_with(|| self.scope.cmp(&other.scope))
            .then_with(|| self.variable.cmp(&other.variable))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Schedule {
    pub setup: Vec<ScheduleEntry>,
    pub tick: Vec<ScheduleEntry>,
    pub conditional: Vec<ScheduleEntry>,
    pub warnings: Vec<String>,
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.setup.len() + self.tick.len() + self.conditional.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One entry per variable with dynamics, bucketed by phase and sorted.
pub fn build_schedule(spec: &ModelSpecification) -> Schedule {
    let mut schedule = Schedule::default();
    let mut unknown = Vec::new();
    for (scope, var) in spec.variables() {
        let Some(d) = &var.dynamics else { continue };
        let entry = ScheduleEntry {
            scope: scope.to_string(),
            variable: var.name.clone(),
            phase: SchedulePhase::from_frequency(d.frequency),
            order_key: (d.execution_order, format!("{scope}.{}", var.name)),
            equation: d.equation.clone(),
            raw_frequency: d.raw_frequency.clone(),
        };
        if d.frequency == Frequency::Unknown {
            unknown.push(entry.clone());
        }
        match entry.phase {
            SchedulePhase::Setup => schedule.setup.push(entry),
            SchedulePhase::Tick => schedule.tick.push(entry),
            SchedulePhase::Conditional => schedule.conditional.push(entry),
        }
    }
    for list in [
        &mut schedule.setup,
        &mut schedule.tick,
        &mut schedule.conditional,
    ] {
        list.sort_by(ScheduleEntry::sort_cmp);
    }
    unknown.sort_by(ScheduleEntry::sort_cmp);

    for e in &unknown {
        schedule.warnings.push(format!(
            "{}: frequency {} not recognized; scheduled every tick",
            e.qualified_name(),
            e.raw_frequency
                .as_deref()
                .map_or("missing".to_string(), |f| format!("{f:?}")),
        ));
    }
    for (label, list) in [
        ("setup", &schedule.setup),
        ("tick", &schedule.tick),
        ("conditional", &schedule.conditional),
    ] {
        let mut groups: BTreeMap<u64, Vec<&ScheduleEntry>> = BTreeMap::new();
        for e in list {
            if let Some(order) = e.order_key.0 {
                groups.entry(order).or_default().push(e);
            }
        }
        for (order, tied) in groups.into_iter().filter(|(_, g)| g.len() > 1) {
            let names: Vec<String> = tied.iter().map(|e| e.qualified_name()).collect();
            let cross_scope = tied.iter().any(|e| e.scope != tied[0].scope);
            schedule.warnings.push(format!(
                "{label}: execution order {order} shared by {}{}; ordered by scope and name",
                names.join(", "),
                if cross_scope { " across scopes" } else { "" },
            ));
        }
    }
    schedule
}

/// Deterministic pseudocode for `spec`, with procedure bodies in schedule
/// order. Declarations are sorted by name, so the file order of `spec` does
/// not matter.
pub fn emit_skeleton(spec: &ModelSpecification, schedule: &Schedule) -> String {
    let mut out = String::new();
    let p = &spec.provenance;
    out.push_str("# Agent-based model skeleton\n");
    let _ = writeln!(out, "# document: {}", p.document_hash);
    let _ = writeln!(out, "# backend: {}", p.backend_id);
    let _ = writeln!(out, "# extracted: {}", p.timestamp);
    let _ = writeln!(out, "# tool: abm-extract {}", p.tool_version);

    let mut sets: Vec<_> = spec.agent_sets.iter().collect();
    sets.sort_by(|a, b| a.name.cmp(&b.name));
    for set in sets {
        let _ = writeln!(out, "\nagent_set {}", set.name);
        comment(&mut out, "description", set.short_description.as_deref());
        comment(&mut out, "role", set.agent_role.as_deref());
        declare(&mut out, &set.variables);
        out.push_str("end\n");
    }
    if let Some(space) = &spec.space {
        out.push_str("\nspace\n");
        comment(&mut out, "description", space.short_description.as_deref());
        let _ = writeln!(
            out,
            "  type: {}",
            space.space_type.as_deref().unwrap_or("unspecified")
        );
        declare(&mut out, &space.variables);
        out.push_str("end\n");
    }
    if !spec.model_level.is_empty() {
        out.push_str("\nmodel_level\n");
        declare(&mut out, &spec.model_level);
        out.push_str("end\n");
    }

    for (name, entries) in [("setup", &schedule.setup), ("tick", &schedule.tick)] {
        let _ = writeln!(out, "\nprocedure {name}");
        for e in entries {
            let _ = writeln!(out, "  # [order {}] {}", order_label(e), e.qualified_name());
            let _ = writeln!(
                out,
                "  {} <- {}",
                e.qualified_name(),
                e.equation.as_deref().unwrap_or(TODO_MARKER)
            );
        }
        out.push_str("end\n");
    }

    if !schedule.conditional.is_empty() {
        out.push_str("\n# conditional updates\n");
        for e in &schedule.conditional {
            let _ = writeln!(
                out,
                "# [order {}] conditional ({}):",
                order_label(e),
                e.raw_frequency.as_deref().unwrap_or("unspecified")
            );
            let _ = writeln!(
                out,
                "#   {} <- {}",
                e.qualified_name(),
                e.equation.as_deref().unwrap_or(TODO_MARKER)
            );
        }
    }
    out
}

fn order_label(e: &ScheduleEntry) -> String {
    e.order_key
        .0
        .map_or_else(|| "-".to_string(), |o| o.to_string())
}

fn comment(out: &mut String, label: &str, text: Option<&str>) {
    if let Some(text) = text {
        let _ = writeln!(out, "  # {label}: {text}");
    }
}

fn declare(out: &mut String, vars: &[VariableSpec]) {
    let mut vars: Vec<_> = vars.iter().collect();
    vars.sort_by(|a, b| a.name.cmp(&b.name));
    for v in vars {
        let d = &v.descriptor;
        let data_type = match (d.data_type, &d.raw_data_type) {
            (DataType::Unknown, Some(raw)) => format!("{raw:?}"),
            (t, _) => data_type_name(t).to_string(),
        };
        let _ = write!(
            out,
            "  var {} : {} = {}",
            v.name,
            data_type,
            d.initial_value.as_deref().unwrap_or("?")
        );
        match &d.short_description {
            Some(desc) => {
                let _ = writeln!(out, "  # {desc}");
            }
            None => out.push('\n'),
        }
    }
}

fn data_type_name(t: DataType) -> &'static str {
    match t {
        DataType::Integer => "integer",
        DataType::Real => "real",
        DataType::Boolean => "boolean",
        DataType::String => "string",
        DataType::Categorical => "categorical",
        DataType::List => "list",
        DataType::Unknown => "unknown",
    }
}
