//! The checked-in fuzz seeds must stay valid inputs, otherwise the fuzzers
//! start from nothing but rejection paths.

use std::fs;
use std::path::PathBuf;

use pasurf_cli::RunConfig;
use pasurf_core::checkpoint::AnyModel;
use pasurf_core::pointcloud::{parse_cloud, parse_drag, parse_pressure, parse_velocity, Manifest, Role};
use pasurf_core::sampling::parse_index_file;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

#[test]
fn cloud_seeds_parse() {
    for (name, bytes) in seeds("parse_cloud") {
        let role = if name == "surface" { Role::Surface } else { Role::Volume };
        parse_cloud(text(&bytes), &name, role).unwrap();
    }
}

#[test]
fn field_seeds_parse() {
    for (name, bytes) in seeds("parse_fields") {
        let t = text(&bytes);
        match name.as_str() {
            "cd" => drop(parse_drag(t, &name).unwrap()),
            "pressure" => drop(parse_pressure(t, &name).unwrap()),
            _ => drop(parse_velocity(t, &name).unwrap()),
        }
    }
}

#[test]
fn structured_seeds_parse() {
    for (_, bytes) in seeds("manifest") {
        Manifest::parse(text(&bytes)).unwrap();
    }
    for (_, bytes) in seeds("index_file") {
        parse_index_file(text(&bytes)).unwrap();
    }
    for (_, bytes) in seeds("checkpoint") {
        AnyModel::decode(&bytes).unwrap();
    }
    for (_, bytes) in seeds("run_config") {
        RunConfig::parse(text(&bytes)).unwrap().validate().unwrap();
    }
}
