use std::fs;
use std::path::{Path, PathBuf};

use abm_extract::canonical::to_canonical_json;
use abm_extract::pipeline::{write_atomic, ISSUES_FILE};
use abm_extract::scaffold::{SCHEDULE_FILE, SKELETON_FILE};
use abm_extract::schema::{has_errors, lint, parse_specification, validate_specification};
use abm_extract::{build_schedule, emit_skeleton, ModelSpecification, ValidationIssue};

use crate::{exit, Failure};

/// Reads, decodes, validates and lints a specification file.
fn check(spec_path: &Path) -> Result<(Option<ModelSpecification>, Vec<ValidationIssue>), Failure> {
    let text = fs::read_to_string(spec_path).map_err(|e| {
        Failure::new(
            exit::DATA,
            format!("cannot read {}: {e}", spec_path.display()),
        )
    })?;
    let value = parse_specification(&text).map_err(|e| {
        Failure::new(
            exit::DATA,
            format!("{} is not JSON: {e}", spec_path.display()),
        )
    })?;
    let (spec, mut issues) = validate_specification(&value);
    if let Some(spec) = &spec {
        issues.extend(lint(spec));
    }
    Ok((spec, issues))
}

fn print_issues(issues: &[ValidationIssue]) {
    for issue in issues {
        println!("{issue}");
    }
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    write_atomic(path, contents).map_err(|e| {
        Failure::new(
            exit::FAILURE,
            format!("cannot write {}: {e}", path.display()),
        )
    })
}

pub fn validate(spec_path: &Path) -> Result<u8, Failure> {
    let (_, issues) = check(spec_path)?;
    print_issues(&issues);
    let issues_path = spec_path
        .parent()
        .unwrap_or(Path::new("."))
        .join(ISSUES_FILE);
    write(&issues_path, &to_canonical_json(&issues))?;
    Ok(if has_errors(&issues) {
        exit::FAILURE
    } else {
        exit::OK
    })
}

pub fn scaffold(spec_path: &Path, out: &Path) -> Result<u8, Failure> {
    let (spec, issues) = check(spec_path)?;
    let spec = match spec {
        Some(spec) if !has_errors(&issues) => spec,
        _ => {
            print_issues(&issues);
            return Err(Failure::new(
                exit::FAILURE,
                format!("{} does not validate; nothing written", spec_path.display()),
            ));
        }
    };
    let (skeleton_path, dir) = if out.is_dir() {
        (out.join(SKELETON_FILE), out.to_path_buf())
    } else {
        let dir = out
            .parent()
            .map(Path::to_path_buf)
            .filter(|p| !p.as_os_str().is_empty());
        (out.to_path_buf(), dir.unwrap_or_else(|| PathBuf::from(".")))
    };
    let schedule = build_schedule(&spec);
    for warning in &schedule.warnings {
        log::warn!("{warning}");
    }
    write(&dir.join(SCHEDULE_FILE), &to_canonical_json(&schedule))?;
    write(&skeleton_path, &emit_skeleton(&spec, &schedule))?;
    Ok(exit::OK)
}
