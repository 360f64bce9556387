//! DRAM and controller energy accounting.

use serde::{Deserialize, Serialize};

use crate::{Error, Ps, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerParams {
    /// Energy of one activate/precharge pair on one device, nJ.
    pub e_act_pre_nj: f64,
    /// Power of one device while it drives or receives a burst, mW.
    pub p_burst_mw: f64,
    /// Standby power per device, mW.
    pub p_background_mw: f64,
    /// Energy of one refresh of a whole rank, nJ.
    pub e_refresh_nj: f64,
    pub vdd: f64,
    /// Peak power of the on-chip memory controller, W.
    pub mc_power_w: f64,
    /// Peak power of one buffer scheduler, W.
    pub bufsched_power_w: f64,
    /// Controller power when idle, as a fraction of peak.
    pub idle_fraction: f64,
}

impl Default for PowerParams {
    fn default() -> Self {
        PowerParams {
            e_act_pre_nj: 15.0,
            p_burst_mw: 250.0,
            p_background_mw: 85.0,
            e_refresh_nj: 420.0,
            vdd: 1.5,
            mc_power_w: 8.5,
            bufsched_power_w: 14.0,
            idle_fraction: 0.5,
        }
    }
}

impl PowerParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.e_act_pre_nj,
            self.p_burst_mw,
            self.p_background_mw,
            self.e_refresh_nj,
            self.vdd,
            self.mc_power_w,
            self.bufsched_power_w,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) || !(0.0..=1.0).contains(&self.idle_fraction) {
            return Err(Error::Config("power parameters must be nonnegative (idle fraction in [0, 1])".into()));
        }
        Ok(())
    }
}

/// A controller unit and the part of the run it was busy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerActivity {
    pub peak_w: f64,
    pub busy_ps: Ps,
}

/// Everything energy depends on, gathered over a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Activity {
    pub runtime_ps: Ps,
    pub devices: u64,
    /// Device activations (each paired with a precharge).
    pub act_devices: u64,
    /// Device bursts, reads plus writes.
    pub bursts: u64,
    pub burst_ps: Ps,
    pub refreshes: u64,
    pub controllers: Vec<ControllerActivity>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerBreakdown {
    pub background_j: f64,
    pub refresh_j: f64,
    pub act_pre_j: f64,
    pub burst_j: f64,
    pub controller_j: f64,
    pub total_j: f64,
    pub runtime_s: f64,
    pub avg_w: f64,
    pub edp: f64,
}

impl PowerBreakdown {
    pub fn components(&self) -> [(&'static str, f64); 5] {
        [
            ("background", self.background_j),
            ("refresh", self.refresh_j),
            ("act_pre", self.act_pre_j),
            ("burst", self.burst_j),
            ("controller", self.controller_j),
        ]
    }

    pub fn avg_watts(&self, joules: f64) -> f64 {
        if self.runtime_s > 0.0 {
            joules / self.runtime_s
        } else {
            0.0
        }
    }
}

const PS: f64 = 1e-12;

pub fn account(p: &PowerParams, a: &Activity) -> PowerBreakdown {
    let runtime_s = a.runtime_ps as f64 * PS;
    let act_pre_j = a.act_devices as f64 * p.e_act_pre_nj * 1e-9;
    let burst_j = a.bursts as f64 * a.burst_ps as f64 * PS * p.p_burst_mw * 1e-3;
    let background_j = a.devices as f64 * p.p_background_mw * 1e-3 * runtime_s;
    let refresh_j = a.refreshes as f64 * p.e_refresh_nj * 1e-9;
    let controller_j = a
        .controllers
        .iter()
        .map(|c| {
            let busy = c.busy_ps.min(a.runtime_ps) as f64 * PS;
            c.peak_w * (busy + p.idle_fraction * (runtime_s - busy))
        })
        .sum::<f64>();
    let total_j = background_j + refresh_j + act_pre_j + burst_j + controller_j;
    PowerBreakdown {
        background_j,
        refresh_j,
        act_pre_j,
        burst_j,
        controller_j,
        total_j,
        runtime_s,
        avg_w: if runtime_s > 0.0 { total_j / runtime_s } else { 0.0 },
        edp: total_j * runtime_s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_run_is_zero() {
        let b = account(&PowerParams::default(), &Activity { devices: 32, ..Default::default() });
        assert_eq!(b.total_j, 0.0);
        assert_eq!(b.edp, 0.0);
    }

    #[test]
    fn idle_controller_charges_idle_fraction() {
        let a = Activity {
            runtime_ps: 1_000_000_000_000,
            devices: 0,
            controllers: vec![ControllerActivity { peak_w: 8.5, busy_ps: 0 }],
            ..Default::default()
        };
        let b = account(&PowerParams::default(), &a);
        assert!((b.controller_j - 4.25).abs() < 1e-9);
    }

    #[test]
    fn components_sum_to_total() {
        let a = Activity {
            runtime_ps: 5_000_000,
            devices: 32,
            act_devices: 1000,
            bursts: 4000,
            burst_ps: 6000,
            refreshes: 3,
            controllers: vec![ControllerActivity { peak_w: 14.0, busy_ps: 1_000_000 }],
        };
        let b = account(&PowerParams::default(), &a);
        let sum: f64 = b.components().iter().map(|c| c.1).sum();
        assert!((sum - b.total_j).abs() <= 1e-9 * b.total_j);
    }
}
