#![allow(dead_code)]

use std::fs;
use std::io::Write;
use std::path::Path;

use localcontrol::dataset::{Role, VariableSchema, VariableSpec};
use localcontrol::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random::<f64>().max(1e-300);
    let v: f64 = rng.random();
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

/// Four confounder groups; exposure effect is positive in two groups and
/// negative in the other two. Row 8 has a missing exposure.
pub fn write_synthetic_csv(path: &Path, n: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = fs::File::create(path).unwrap();
    writeln!(f, "uid,y,e,c1,c2,c3,r,z").unwrap();
    for i in 0..n {
        let g = (i % 4) as f64;
        let e: f64 = rng.random();
        let sign = if g < 2.0 { 1.0 } else { -1.0 };
        let y = 10.0 * g + sign * e + 0.3 * rng.random::<f64>();
        let c1 = 5.0 * g + rng.random::<f64>();
        let c2 = -3.0 * g + rng.random::<f64>();
        let c3: f64 = rng.random();
        let r: f64 = rng.random();
        let z = g + rng.random::<f64>();
        let exposure = if i == 7 { "NA".to_string() } else { e.to_string() };
        writeln!(f, "{},{y},{exposure},{c1},{c2},{c3},{r},{z}", 1000 + i).unwrap();
    }
}

pub fn synthetic_schema() -> VariableSchema {
    VariableSchema::new(vec![
        VariableSpec::new("uid", Role::Id),
        VariableSpec::new("y", Role::Outcome),
        VariableSpec::new("e", Role::Exposure),
        VariableSpec::new("c1", Role::Confounder),
        VariableSpec::new("c2", Role::Confounder),
        VariableSpec::new("c3", Role::Confounder),
        VariableSpec::new("r", Role::Passenger),
        VariableSpec::new("z", Role::Passenger),
    ])
    .unwrap()
}

/// Small, fast config over a freshly written synthetic CSV in `dir`.
pub fn synthetic_config(dir: &Path) -> RunConfig {
    let input = dir.join("input.csv");
    write_synthetic_csv(&input, 240, 5);
    let mut cfg = RunConfig {
        input,
        output_dir: dir.join("out"),
        schema: synthetic_schema(),
        k: 4,
        k_grid: vec![1, 2, 4, 8],
        ..Default::default()
    };
    cfg.confirm.replicates = 10;
    cfg.confirm.permutations = 19;
    cfg.explore.permutations = Some(9);
    cfg.forest.trees = 30;
    cfg.forest.pdp_grid_size = 7;
    cfg.mob.regressor = "r".into();
    cfg.mob.partition_variable = "z".into();
    cfg.mob.min_size = 40;
    cfg
}
