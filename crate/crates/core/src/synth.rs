//! Synthetic feeder generation and DER placement.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::network::{
    Branch, Bus, DerDevice, DerMode, NetworkData, NetworkError, Power, RadialNetwork,
    VoltageLimits, SUBSTATION, UNBOUNDED_AMPACITY_SQ,
};

/// Impedance per branch used by [`FeederSpec::reference_case`]: the default
/// 7:1 r/x ratio, scaled so the fully equipped loss-minimized feeder loses
/// about 4.5 kW.
pub const REFERENCE_Z: (f64, f64) = (1.905e-7, 2.72e-8);

/// Household load used by [`FeederSpec::reference_case`] (10 kW, 1 kvar on a
/// 1000 kVA base).
pub const REFERENCE_LOAD: Power = Power { p: 0.01, q: 0.001 };

/// Topology and electrical parameters of a synthetic feeder.
///
/// The main feeder is a chain from the substation. Before each lateral tap it
/// gets `main_nodes_between_laterals` load buses, then the tap bus itself.
/// Each lateral is a chain of neighborhood heads starting at its tap, and
/// each head carries a chain of households.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederSpec {
    pub laterals: usize,
    pub neighborhoods_per_lateral: usize,
    pub households_per_neighborhood: usize,
    pub main_nodes_between_laterals: usize,
    pub load: Power,
    /// Series impedance `(r, x)` of every branch.
    pub z: (f64, f64),
    pub v0: f64,
    pub i_rated_sq: f64,
    pub base_kv: f64,
    pub base_kva: f64,
}

impl Default for FeederSpec {
    fn default() -> Self {
        FeederSpec {
            laterals: 20,
            neighborhoods_per_lateral: 20,
            households_per_neighborhood: 20,
            main_nodes_between_laterals: 4,
            load: Power::new(0.1, 0.01),
            z: (0.07, 0.01),
            v0: 1.0,
            i_rated_sq: UNBOUNDED_AMPACITY_SQ,
            base_kv: 12.47,
            base_kva: 1000.0,
        }
    }
}

impl FeederSpec {
    /// Default topology with household loads and line impedances under which
    /// the full feeder has a power-flow solution inside the voltage band.
    pub fn reference_case() -> Self {
        FeederSpec { load: REFERENCE_LOAD, z: REFERENCE_Z, ..FeederSpec::default() }
    }

    /// Reference-case feeder of about `target` buses for scaling studies:
    /// laterals of 12 neighborhoods with 9 households each (125 buses per
    /// lateral), as many laterals as fit.
    pub fn sized(target: usize) -> Self {
        let per_lateral = 4 + 1 + 12 * 10;
        let laterals =
            ((target.saturating_sub(1) as f64 / per_lateral as f64).round() as usize).max(1);
        FeederSpec {
            laterals,
            neighborhoods_per_lateral: 12,
            households_per_neighborhood: 9,
            ..FeederSpec::reference_case()
        }
    }

    /// Closed-form bus count including the substation.
    pub fn bus_count(&self) -> usize {
        1 + self.laterals
            * (self.main_nodes_between_laterals
                + 1
                + self.neighborhoods_per_lateral * (1 + self.households_per_neighborhood))
    }

    fn validate(&self) -> Result<(), NetworkError> {
        let counts = [
            self.laterals,
            self.neighborhoods_per_lateral,
            self.households_per_neighborhood,
            self.main_nodes_between_laterals,
        ];
        if counts.contains(&0) {
            return Err(NetworkError::InvalidData("feeder counts must be at least 1".into()));
        }
        if !(self.load.p >= 0.0) {
            return Err(NetworkError::InvalidData("load real part must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Builds the synthetic feeder described by `spec`. Ids are assigned in
/// construction order, so every parent id is smaller than its children's.
pub fn build_feeder(spec: &FeederSpec) -> Result<RadialNetwork, NetworkError> {
    spec.validate()?;
    let n = spec.bus_count();
    let mut buses = Vec::with_capacity(n);
    let mut branches = Vec::with_capacity(n - 1);
    buses.push(Bus { id: SUBSTATION, p_load: 0.0, q_load: 0.0, der: None });
    let mut add = |parent: usize, buses: &mut Vec<Bus>| -> usize {
        let id = buses.len();
        buses.push(Bus { id, p_load: spec.load.p, q_load: spec.load.q, der: None });
        branches.push(Branch {
            from: parent,
            to: id,
            r: spec.z.0,
            x: spec.z.1,
            i_rated_sq: spec.i_rated_sq,
        });
        id
    };
    let mut main_tail = SUBSTATION;
    for _ in 0..spec.laterals {
        for _ in 0..spec.main_nodes_between_laterals {
            main_tail = add(main_tail, &mut buses);
        }
        let tap = add(main_tail, &mut buses);
        main_tail = tap;
        let mut head_parent = tap;
        for _ in 0..spec.neighborhoods_per_lateral {
            let head = add(head_parent, &mut buses);
            let mut house_parent = head;
            for _ in 0..spec.households_per_neighborhood {
                house_parent = add(house_parent, &mut buses);
            }
            head_parent = head;
        }
    }
    debug_assert_eq!(buses.len(), n);
    RadialNetwork::new(NetworkData {
        base_kv: spec.base_kv,
        base_kva: spec.base_kva,
        v0: spec.v0,
        limits: VoltageLimits::default(),
        buses,
        branches,
    })
}

/// DER deployment scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerScenario {
    /// Fraction of load buses that receive a DER.
    pub penetration: f64,
    pub rating_kva: f64,
    /// Measured active output (reactive dispatch) or active cap (active
    /// dispatch), in kW.
    pub p_nominal_kw: f64,
    pub mode: DerMode,
    pub load_multiplier: f64,
    pub seed: u64,
}

impl DerScenario {
    /// 8.4 kVA inverters producing 7 kW, reactive power dispatched.
    pub fn volt_var(penetration: f64, seed: u64) -> Self {
        DerScenario {
            penetration,
            rating_kva: 8.4,
            p_nominal_kw: 7.0,
            mode: DerMode::ReactiveDispatch,
            load_multiplier: 1.0,
            seed,
        }
    }

    /// Active-power dispatch with a 21 kW cap per device.
    pub fn hosting(penetration: f64, seed: u64) -> Self {
        DerScenario {
            penetration,
            rating_kva: 21.0,
            p_nominal_kw: 21.0,
            mode: DerMode::ActiveDispatch,
            load_multiplier: 1.0,
            seed,
        }
    }

    fn validate(&self) -> Result<(), NetworkError> {
        if !(0.0..=1.0).contains(&self.penetration) {
            return Err(NetworkError::InvalidData(format!(
                "penetration {} outside [0, 1]",
                self.penetration
            )));
        }
        if !(self.load_multiplier >= 0.0) {
            return Err(NetworkError::InvalidData("load multiplier must be nonnegative".into()));
        }
        if !(self.rating_kva >= 0.0 && self.p_nominal_kw >= 0.0) {
            return Err(NetworkError::InvalidData("DER sizes must be nonnegative".into()));
        }
        if self.mode == DerMode::ReactiveDispatch && self.rating_kva < self.p_nominal_kw {
            return Err(NetworkError::InvalidData(
                "rating must cover the nominal output in reactive-dispatch mode".into(),
            ));
        }
        Ok(())
    }
}

/// Replaces all DERs with a seeded uniform draw of `round(penetration * L)`
/// load buses and scales every load by the scenario multiplier.
pub fn place_ders(
    network: &RadialNetwork,
    scenario: &DerScenario,
) -> Result<RadialNetwork, NetworkError> {
    scenario.validate()?;
    let mut data = network.data().clone();
    let load_buses: Vec<usize> = data
        .buses
        .iter()
        .filter(|b| b.id != SUBSTATION && (b.p_load != 0.0 || b.q_load != 0.0))
        .map(|b| b.id)
        .collect();
    let count = (scenario.penetration * load_buses.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut chosen: Vec<usize> =
        sample(&mut rng, load_buses.len(), count).into_iter().map(|i| load_buses[i]).collect();
    chosen.sort_unstable();
    let base = data.base_kva;
    let rating = scenario.rating_kva / base;
    let p_measured = match scenario.mode {
        DerMode::ReactiveDispatch => scenario.p_nominal_kw / base,
        DerMode::ActiveDispatch => 0.0,
    };
    // In active-dispatch mode the cap is the smaller of rating and p_nominal.
    let rating = match scenario.mode {
        DerMode::ReactiveDispatch => rating,
        DerMode::ActiveDispatch => rating.min(scenario.p_nominal_kw / base),
    };
    for b in data.buses.iter_mut() {
        b.der = None;
        b.p_load *= scenario.load_multiplier;
        b.q_load *= scenario.load_multiplier;
    }
    for id in chosen {
        data.buses[id].der = Some(DerDevice { rating, p_measured, mode: scenario.mode });
    }
    RadialNetwork::new(data)
}
