use std::fs;
use std::path::Path;

use riskctl::io::{
    config_hash, interactions_csv, items_csv, load_dir, read_interactions, snapshot_csv,
    write_dataset, Scope, SnapshotRow, INTERACTIONS_HEADER,
};
use riskctl::{CliError, ExitCode};
use riskctl_core::dataset::{generate_synthetic, SynthConfig};
use riskctl_core::UserId;

fn small() -> SynthConfig {
    SynthConfig {
        users: 12,
        items: 60,
        groups: 3,
        slates_per_user: 2,
        slate_width: 5,
        ..SynthConfig::default()
    }
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn dataset_round_trips_exactly() {
    let d = generate_synthetic(&small(), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = write_dataset(&d, dir.path()).unwrap();
    assert_eq!(files.len(), 2);
    let back = load_dir(dir.path()).unwrap();
    assert_eq!(interactions_csv(&back), interactions_csv(&d));
    assert_eq!(items_csv(&back), items_csv(&d));
    assert_eq!(back.users().len(), d.users().len());
}

#[cfg(unix)]
#[test]
fn written_files_are_world_readable() {
    use std::os::unix::fs::PermissionsExt;
    let d = generate_synthetic(&small(), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for f in write_dataset(&d, dir.path()).unwrap() {
        assert_eq!(fs::metadata(f).unwrap().permissions().mode() & 0o777, 0o644);
    }
}

fn parse_error(text: &str) -> (u64, String) {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "interactions.csv", text);
    match read_interactions(&p) {
        Err(e @ CliError::Parse { .. }) => {
            assert_eq!(e.exit_code(), ExitCode::Runtime);
            let CliError::Parse { line, message, .. } = e else { unreachable!() };
            (line, message)
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn parse_errors_name_the_line() {
    let header = INTERACTIONS_HEADER.join(",");
    let (line, msg) = parse_error(&format!("{header}\n0,1,0,0.5,0.2,0\n0,2,0,0.5,0.2,yes\n"));
    assert_eq!(line, 3);
    assert!(msg.contains("flagged"), "{msg}");

    let (line, msg) = parse_error(&format!("{header}\n0,1,0,0.5,1.5,0\n"));
    assert_eq!(line, 2);
    assert!(msg.contains("outside [0, 1]"), "{msg}");

    let (line, msg) = parse_error(&format!("{header}\n0,1,0,NaN,0.2,0\n"));
    assert_eq!(line, 2);
    assert!(msg.contains("relevance"), "{msg}");

    let (line, msg) = parse_error("user,item\n0,1\n");
    assert_eq!(line, 1);
    assert!(msg.contains("expected header"), "{msg}");
}

#[test]
fn missing_file_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let e = load_dir(&dir.path().join("absent")).unwrap_err();
    assert_eq!(e.exit_code(), ExitCode::Usage);
    assert!(e.to_string().contains("interactions.csv"), "{e}");
}

#[test]
fn inconsistent_data_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let header = INTERACTIONS_HEADER.join(",");
    write(dir.path(), "interactions.csv", &format!("{header}\n0,7,0,0.5,0.2,0\n"));
    write(dir.path(), "items.csv", "item_id,group_id,likes\n0,0,3\n");
    let e = load_dir(dir.path()).unwrap_err();
    assert!(matches!(e, CliError::Config { .. }), "{e:?}");
}

#[test]
fn snapshot_layout() {
    let rows = [
        SnapshotRow {
            scope: Scope::Global,
            alpha: 0.1,
            lambda_hat: 0.25,
            samples: 40,
            conservative: false,
        },
        SnapshotRow {
            scope: Scope::User(UserId(3)),
            alpha: 0.1,
            lambda_hat: 1.001,
            samples: 0,
            conservative: true,
        },
    ];
    let text = String::from_utf8(snapshot_csv(&rows)).unwrap();
    assert_eq!(
        text,
        "scope,scope_id,alpha,lambda_hat,Q,conservative\nglobal,,0.1,0.25,40,false\nuser,3,0.1,1.001,0,true\n"
    );
}

#[test]
fn config_hash_ignores_formatting_but_not_values() {
    let a: serde_json::Value = serde_json::from_str(r#"{"b": 1, "a": [1, 2]}"#).unwrap();
    let b: serde_json::Value = serde_json::from_str(r#"{ "a":[1,2],"b":1 }"#).unwrap();
    let c: serde_json::Value = serde_json::from_str(r#"{"a": [1, 2], "b": 2}"#).unwrap();
    assert_eq!(config_hash(&a), config_hash(&b));
    assert_ne!(config_hash(&a), config_hash(&c));
    assert_eq!(config_hash(&a).len(), 64);
}
