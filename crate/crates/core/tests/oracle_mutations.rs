mod common;

use common::{cmd, mutations, GEO};
use mims_core::dram::oracle;
use mims_core::dram::{CmdKind, TimingParams};

#[test]
fn each_single_constraint_mutation_is_caught() {
    for m in mutations() {
        assert_eq!(m.caught(), m.expect, "{}", m.name);
    }
}

#[test]
fn same_cycle_is_command_bus() {
    let t = TimingParams::default();
    let mut a = cmd(CmdKind::Act, 0, 1, 0, 5, 0);
    let mut b = cmd(CmdKind::Act, 1, 1, 0, 5, 0);
    a.time = 10;
    b.time = 10;
    assert_eq!(oracle::validate(&[a, b], &t, &GEO).unwrap_err().constraint, "command bus");
    b.time = 9;
    assert_eq!(oracle::validate(&[a, b], &t, &GEO).unwrap_err().constraint, "ordering");
}

#[test]
fn cas_to_closed_row_is_row_state() {
    let mut c = cmd(CmdKind::Rd, 0, 1, 0, 5, 0);
    c.time = 50;
    assert_eq!(oracle::validate(&[c], &TimingParams::default(), &GEO).unwrap_err().constraint, "row state");
}
