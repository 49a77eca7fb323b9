//! Thermal state-space model of the household.
//!
//! The household is a lumped RC network with up to five temperature states:
//! room air, floor slab, water in the floor-heating pipes, refrigerator
//! chamber and water-heater tank. Each state obeys a first-order heat
//! balance; heat-transfer coefficients (`UA`, W/°C) play the role of
//! conductances and thermal capacities (J/°C) the role of capacitors.
//!
//! Two space-heating variants are supported. A water-based floor heater
//! drives the room through the pipe-water -> floor -> room chain, while an
//! HVAC unit heats (or cools) the room air directly and leaves the floor and
//! pipe states out of the model entirely.
//!
//! Everything here is SI internally (W, J/°C, seconds); control inputs are
//! in kW like the rest of the crate, and the kW -> W factor is applied once,
//! inside coefficient construction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// kW -> W.
const KILO: f64 = 1000.0;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid building spec: {0}")]
    InvalidSpec(String),
    #[error("empty disturbance sequence")]
    EmptyDisturbances,
    #[error("non-positive discretization step: {0} s")]
    NonPositiveStep(f64),
    #[error("period index {index} out of range (model has {len} periods)")]
    PeriodOutOfRange { index: usize, len: usize },
    #[error("state vector variant does not match model variant")]
    VariantMismatch,
    #[error("access to disabled state {0:?}")]
    DisabledState(StateId),
}

/// Which space-heating system the household is equipped with.
///
/// Floor heating activates the floor and pipe-water states and the heat-pump
/// control; HVAC keeps only the room air state (plus the two appliance
/// states) and uses the direct heat/cool controls instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeaterVariant {
    FloorHeating,
    Hvac,
}

impl HeaterVariant {
    pub fn active_states(self) -> &'static [StateId] {
        match self {
            HeaterVariant::FloorHeating => &[
                StateId::Room,
                StateId::Floor,
                StateId::PipeWater,
                StateId::Fridge,
                StateId::WaterHeater,
            ],
            HeaterVariant::Hvac => &[StateId::Room, StateId::Fridge, StateId::WaterHeater],
        }
    }

    pub fn active_controls(self) -> &'static [ControlId] {
        match self {
            HeaterVariant::FloorHeating => &[
                ControlId::HeatPump,
                ControlId::Lighting,
                ControlId::Blind,
                ControlId::Fridge,
                ControlId::WaterHeater,
            ],
            HeaterVariant::Hvac => &[
                ControlId::Heat,
                ControlId::Cool,
                ControlId::Lighting,
                ControlId::Blind,
                ControlId::Fridge,
                ControlId::WaterHeater,
            ],
        }
    }

    pub fn state_index(self, id: StateId) -> Option<usize> {
        self.active_states().iter().position(|&s| s == id)
    }

    pub fn control_index(self, id: ControlId) -> Option<usize> {
        self.active_controls().iter().position(|&c| c == id)
    }
}

/// Temperature states of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StateId {
    Room,
    Floor,
    PipeWater,
    Fridge,
    WaterHeater,
}

/// Controllable inputs. All are electrical powers in kW except `Blind`,
/// which is the window blind position in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControlId {
    HeatPump,
    Heat,
    Cool,
    Lighting,
    Blind,
    Fridge,
    WaterHeater,
}

impl ControlId {
    /// Blind position carries no electrical consumption.
    pub fn is_power(self) -> bool {
        !matches!(self, ControlId::Blind)
    }
}

/// Exogenous disturbance channels entering the dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisturbanceId {
    Ambient,
    Occupancy,
    HotWaterDraw,
}

pub const N_DISTURBANCES: usize = 3;

/// Physical parameters of the household.
///
/// `UA` coefficients are in W/°C, capacities in J/°C, device bounds in kW.
/// The appliance numbers (fridge, water heater) and the lighting efficacies
/// follow the published data sheet for this case study; the envelope values
/// (room/floor capacities, inter-node couplings) are documented defaults:
/// `ua_room_ambient` is sized so a 1 kW HVAC heater (COP 1.67) holds the
/// room at 20 °C against a 0 °C ambient in steady state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildingSpec {
    pub ua_room_ambient: f64,
    pub ua_floor_room: f64,
    pub ua_water_floor: f64,
    pub ua_room_fridge: f64,
    pub ua_waterheater_ambient: f64,
    pub cap_room: f64,
    pub cap_floor: f64,
    pub cap_pipewater: f64,
    pub cap_fridge: f64,
    pub cap_waterheater: f64,
    pub cop_hp: f64,
    pub cop_heat: f64,
    pub cop_cool: f64,
    pub cop_fridge: f64,
    pub cop_waterheater: f64,
    pub pmax_hp: f64,
    pub pmax_heat: f64,
    pub pmax_cool: f64,
    pub pmax_wh: f64,
    pub pmax_rf: f64,
    pub pmax_al: f64,
    /// m²
    pub floor_area: f64,
    /// m²; zero models a windowless household.
    pub window_area: f64,
    /// Fraction of transmitted window solar gain delivered to the room node;
    /// the remainder goes to the floor node (floor-heating variant only).
    pub solar_transmittance_split: f64,
    /// kW of internal heat per unit of the occupancy signal.
    pub internal_gain_per_occupancy: f64,
    /// J/(kg·°C)
    pub water_specific_heat: f64,
    /// °C of the mains water refilling the tank during draws.
    pub inlet_water_temp: f64,
    /// lumen/kW of artificial lighting power.
    pub lum_efficacy_indoor: f64,
    /// lumen/W of solar irradiance on the window.
    pub lum_efficacy_daylight: f64,
}

impl Default for BuildingSpec {
    fn default() -> Self {
        BuildingSpec {
            ua_room_ambient: 83.5,
            ua_floor_room: 250.0,
            ua_water_floor: 500.0,
            ua_room_fridge: 0.678,
            ua_waterheater_ambient: 0.5,
            cap_room: 3.6e6,
            cap_floor: 6.0e6,
            // 400 kg of water in the floor-heating loop.
            cap_pipewater: 400.0 * 4186.0,
            // 6.65 Wh/°C
            cap_fridge: 6.65 * 3600.0,
            // 34.85 Wh/°C (a 30 l tank)
            cap_waterheater: 34.85 * 3600.0,
            cop_hp: 3.0,
            cop_heat: 1.67,
            cop_cool: 3.67,
            cop_fridge: 0.76,
            cop_waterheater: 0.92,
            pmax_hp: 1.0,
            pmax_heat: 1.0,
            pmax_cool: 1.0,
            pmax_wh: 1.26,
            pmax_rf: 0.35,
            pmax_al: 0.06,
            floor_area: 30.0,
            window_area: 1.0,
            solar_transmittance_split: 1.0,
            internal_gain_per_occupancy: 0.1,
            water_specific_heat: 4186.0,
            inlet_water_temp: 10.0,
            lum_efficacy_indoor: 90.0 * 1000.0,
            lum_efficacy_daylight: 105.0,
        }
    }
}

impl BuildingSpec {
    /// Checks the physical invariants. Capacities and the floor area must be
    /// strictly positive; conductances, COPs, power bounds and the window
    /// area must be non-negative (zero COPs and a zero window are degenerate
    /// but legitimate configurations: a windowless household is used when
    /// isolating envelope effects).
    pub fn validate(&self) -> Result<(), ModelError> {
        let caps = [
            ("cap_room", self.cap_room),
            ("cap_floor", self.cap_floor),
            ("cap_pipewater", self.cap_pipewater),
            ("cap_fridge", self.cap_fridge),
            ("cap_waterheater", self.cap_waterheater),
        ];
        for (name, v) in caps {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ModelError::InvalidSpec(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        if !(self.floor_area > 0.0) {
            return Err(ModelError::InvalidSpec(format!(
                "floor_area must be strictly positive, got {}",
                self.floor_area
            )));
        }
        let nonneg = [
            ("ua_room_ambient", self.ua_room_ambient),
            ("ua_floor_room", self.ua_floor_room),
            ("ua_water_floor", self.ua_water_floor),
            ("ua_room_fridge", self.ua_room_fridge),
            ("ua_waterheater_ambient", self.ua_waterheater_ambient),
            ("cop_hp", self.cop_hp),
            ("cop_heat", self.cop_heat),
            ("cop_cool", self.cop_cool),
            ("cop_fridge", self.cop_fridge),
            ("cop_waterheater", self.cop_waterheater),
            ("pmax_hp", self.pmax_hp),
            ("pmax_heat", self.pmax_heat),
            ("pmax_cool", self.pmax_cool),
            ("pmax_wh", self.pmax_wh),
            ("pmax_rf", self.pmax_rf),
            ("pmax_al", self.pmax_al),
            ("window_area", self.window_area),
            ("internal_gain_per_occupancy", self.internal_gain_per_occupancy),
            ("water_specific_heat", self.water_specific_heat),
            ("lum_efficacy_indoor", self.lum_efficacy_indoor),
            ("lum_efficacy_daylight", self.lum_efficacy_daylight),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(ModelError::InvalidSpec(format!(
                    "{name} must be non-negative and finite, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.solar_transmittance_split) {
            return Err(ModelError::InvalidSpec(format!(
                "solar_transmittance_split must lie in [0,1], got {}",
                self.solar_transmittance_split
            )));
        }
        if !self.inlet_water_temp.is_finite() {
            return Err(ModelError::InvalidSpec("inlet_water_temp not finite".into()));
        }
        Ok(())
    }

    /// Upper control bound for one device (kW; 1.0 for the blind position).
    pub fn control_upper(&self, id: ControlId) -> f64 {
        match id {
            ControlId::HeatPump => self.pmax_hp,
            ControlId::Heat => self.pmax_heat,
            ControlId::Cool => self.pmax_cool,
            ControlId::Lighting => self.pmax_al,
            ControlId::Blind => 1.0,
            ControlId::Fridge => self.pmax_rf,
            ControlId::WaterHeater => self.pmax_wh,
        }
    }
}

/// Temperatures of the active states, °C. Entries that do not exist under
/// the chosen heater variant are disabled and answer `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector {
    variant: HeaterVariant,
    values: [f64; 5],
}

impl StateVector {
    pub fn floor_heating(
        room: f64,
        floor: f64,
        pipe_water: f64,
        fridge: f64,
        waterheater: f64,
    ) -> Self {
        StateVector {
            variant: HeaterVariant::FloorHeating,
            values: [room, floor, pipe_water, fridge, waterheater],
        }
    }

    pub fn hvac(room: f64, fridge: f64, waterheater: f64) -> Self {
        StateVector {
            variant: HeaterVariant::Hvac,
            values: [room, f64::NAN, f64::NAN, fridge, waterheater],
        }
    }

    /// Uniform-temperature start: every active node at `room` except the
    /// appliances, which start mid-band.
    pub fn ambient_start(variant: HeaterVariant, room: f64, fridge: f64, waterheater: f64) -> Self {
        match variant {
            HeaterVariant::FloorHeating => {
                StateVector::floor_heating(room, room, room, fridge, waterheater)
            }
            HeaterVariant::Hvac => StateVector::hvac(room, fridge, waterheater),
        }
    }

    pub fn variant(&self) -> HeaterVariant {
        self.variant
    }

    pub fn get(&self, id: StateId) -> Option<f64> {
        self.variant.state_index(id).map(|_| self.values[raw_state_index(id)])
    }

    pub fn room(&self) -> f64 {
        self.values[0]
    }

    pub fn fridge(&self) -> f64 {
        self.values[3]
    }

    pub fn waterheater(&self) -> f64 {
        self.values[4]
    }

    pub fn floor(&self) -> Option<f64> {
        self.get(StateId::Floor)
    }

    pub fn pipe_water(&self) -> Option<f64> {
        self.get(StateId::PipeWater)
    }

    /// Active entries in the variant's state order.
    pub fn active_values(&self) -> Vec<f64> {
        self.variant
            .active_states()
            .iter()
            .map(|&s| self.values[raw_state_index(s)])
            .collect()
    }

    pub fn from_active_values(variant: HeaterVariant, vals: &[f64]) -> Self {
        debug_assert_eq!(vals.len(), variant.active_states().len());
        let mut values = [f64::NAN; 5];
        for (&id, &v) in variant.active_states().iter().zip(vals) {
            values[raw_state_index(id)] = v;
        }
        StateVector { variant, values }
    }

    pub fn is_finite(&self) -> bool {
        self.active_values().iter().all(|v| v.is_finite())
    }
}

fn raw_state_index(id: StateId) -> usize {
    match id {
        StateId::Room => 0,
        StateId::Floor => 1,
        StateId::PipeWater => 2,
        StateId::Fridge => 3,
        StateId::WaterHeater => 4,
    }
}

/// One period's control action. Powers in kW, `blind` in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlVector {
    pub hp: f64,
    pub heat: f64,
    pub cool: f64,
    pub al: f64,
    pub blind: f64,
    pub rf: f64,
    pub wh: f64,
}

impl ControlVector {
    pub fn get(&self, id: ControlId) -> f64 {
        match id {
            ControlId::HeatPump => self.hp,
            ControlId::Heat => self.heat,
            ControlId::Cool => self.cool,
            ControlId::Lighting => self.al,
            ControlId::Blind => self.blind,
            ControlId::Fridge => self.rf,
            ControlId::WaterHeater => self.wh,
        }
    }

    pub fn set(&mut self, id: ControlId, v: f64) {
        match id {
            ControlId::HeatPump => self.hp = v,
            ControlId::Heat => self.heat = v,
            ControlId::Cool => self.cool = v,
            ControlId::Lighting => self.al = v,
            ControlId::Blind => self.blind = v,
            ControlId::Fridge => self.rf = v,
            ControlId::WaterHeater => self.wh = v,
        }
    }

    /// Sum of the electrical power entries (blind excluded), kW.
    pub fn total_power(&self) -> f64 {
        self.hp + self.heat + self.cool + self.al + self.rf + self.wh
    }
}

/// One period's exogenous inputs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DisturbanceVector {
    /// Outdoor temperature, °C.
    pub ambient: f64,
    /// Occupancy signal, non-negative.
    pub occupancy: f64,
    /// Hot-water demand, litres drawn within the period.
    pub hot_water_draw: f64,
    /// Natural light available at the window, lumen
    /// (irradiance × daylight efficacy × window area).
    pub solar_illuminance: f64,
    /// Standby consumption, kW. Enters the power balance, not the dynamics.
    pub standby: f64,
}

impl DisturbanceVector {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hot_water_draw < 0.0 || self.occupancy < 0.0 || self.solar_illuminance < 0.0 {
            return Err(ModelError::InvalidSpec(
                "disturbance entries hot_water_draw/occupancy/solar_illuminance must be >= 0".into(),
            ));
        }
        Ok(())
    }

    fn channel(&self, id: DisturbanceId) -> f64 {
        match id {
            DisturbanceId::Ambient => self.ambient,
            DisturbanceId::Occupancy => self.occupancy,
            DisturbanceId::HotWaterDraw => self.hot_water_draw,
        }
    }
}

/// Small dense matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Per-period continuous-time coefficients (units 1/s on the A entries):
/// `dx/dt = A_t x + B_t u + E_t z`. The set is per-period because the
/// water-heater draw makes its own A entry time-varying and the solar gain
/// makes the blind column of B time-varying.
#[derive(Debug, Clone)]
pub struct ContinuousCoefficients {
    pub variant: HeaterVariant,
    pub n_steps: usize,
    pub a: Vec<Mat>,
    pub b: Vec<Mat>,
    pub e: Vec<Mat>,
}

/// Euler-discretized model: `x_t = A_d x_{t-1} + B_d u_{t-1} + E_d z_{t-1}`.
#[derive(Debug, Clone)]
pub struct DiscreteModel {
    pub variant: HeaterVariant,
    /// Discretization step, seconds.
    pub dt: f64,
    pub n_steps: usize,
    pub a_mats: Vec<Mat>,
    pub b_mats: Vec<Mat>,
    pub e_mats: Vec<Mat>,
}

/// Builds the per-period continuous heat-balance coefficients.
///
/// `dt` (seconds) is only used to convert the per-period hot-water draw in
/// litres into a mass flow in kg/s for the tank's loss and refill terms.
pub fn build_continuous_coefficients(
    spec: &BuildingSpec,
    variant: HeaterVariant,
    disturbances: &[DisturbanceVector],
    dt: f64,
) -> Result<ContinuousCoefficients, ModelError> {
    spec.validate()?;
    if disturbances.is_empty() {
        return Err(ModelError::EmptyDisturbances);
    }
    if !(dt > 0.0) {
        return Err(ModelError::NonPositiveStep(dt));
    }
    for z in disturbances {
        z.validate()?;
    }

    let states = variant.active_states();
    let controls = variant.active_controls();
    let n_x = states.len();
    let n_u = controls.len();
    let sx = |id| variant.state_index(id).expect("active state");
    let su = |id| variant.control_index(id).expect("active control");

    let mut a_all = Vec::with_capacity(disturbances.len());
    let mut b_all = Vec::with_capacity(disturbances.len());
    let mut e_all = Vec::with_capacity(disturbances.len());

    for z in disturbances {
        let mut a = Mat::zeros(n_x, n_x);
        let mut b = Mat::zeros(n_x, n_u);
        let mut e = Mat::zeros(n_x, N_DISTURBANCES);

        // Transmitted solar power at fully open blinds, W.
        let solar_watts = if spec.lum_efficacy_daylight > 0.0 {
            z.solar_illuminance / spec.lum_efficacy_daylight
        } else {
            0.0
        };

        // Room air node.
        let r = sx(StateId::Room);
        let mut room_loss = spec.ua_room_ambient + spec.ua_room_fridge;
        if variant == HeaterVariant::FloorHeating {
            room_loss += spec.ua_floor_room;
            *a.at_mut(r, sx(StateId::Floor)) += spec.ua_floor_room / spec.cap_room;
        }
        *a.at_mut(r, r) -= room_loss / spec.cap_room;
        *a.at_mut(r, sx(StateId::Fridge)) += spec.ua_room_fridge / spec.cap_room;
        if variant == HeaterVariant::Hvac {
            *b.at_mut(r, su(ControlId::Heat)) += KILO * spec.cop_heat / spec.cap_room;
            *b.at_mut(r, su(ControlId::Cool)) -= KILO * spec.cop_cool / spec.cap_room;
        }
        *b.at_mut(r, su(ControlId::Lighting)) += KILO / spec.cap_room;
        *b.at_mut(r, su(ControlId::Blind)) +=
            spec.solar_transmittance_split * solar_watts / spec.cap_room;
        *e.at_mut(r, DisturbanceId::Ambient as usize) += spec.ua_room_ambient / spec.cap_room;
        *e.at_mut(r, DisturbanceId::Occupancy as usize) +=
            KILO * spec.internal_gain_per_occupancy / spec.cap_room;

        if variant == HeaterVariant::FloorHeating {
            // Floor slab node.
            let f = sx(StateId::Floor);
            *a.at_mut(f, r) += spec.ua_floor_room / spec.cap_floor;
            *a.at_mut(f, f) -= (spec.ua_floor_room + spec.ua_water_floor) / spec.cap_floor;
            *a.at_mut(f, sx(StateId::PipeWater)) += spec.ua_water_floor / spec.cap_floor;
            *b.at_mut(f, su(ControlId::Blind)) +=
                (1.0 - spec.solar_transmittance_split) * solar_watts / spec.cap_floor;

            // Pipe-water node.
            let w = sx(StateId::PipeWater);
            *a.at_mut(w, f) += spec.ua_water_floor / spec.cap_pipewater;
            *a.at_mut(w, w) -= spec.ua_water_floor / spec.cap_pipewater;
            *b.at_mut(w, su(ControlId::HeatPump)) += KILO * spec.cop_hp / spec.cap_pipewater;
        }

        // Refrigerator chamber.
        let rf = sx(StateId::Fridge);
        *a.at_mut(rf, r) += spec.ua_room_fridge / spec.cap_fridge;
        *a.at_mut(rf, rf) -= spec.ua_room_fridge / spec.cap_fridge;
        *b.at_mut(rf, su(ControlId::Fridge)) -= KILO * spec.cop_fridge / spec.cap_fridge;

        // Water-heater tank (sits outside: couples to the ambient). A draw
        // of m kg/s replaces tank water with inlet water, so the tank both
        // loses heat at m·c·x and gains m·c·x_inlet, which makes the
        // self-coefficient time-varying.
        let wh = sx(StateId::WaterHeater);
        let mass_flow = z.hot_water_draw / dt; // kg/s (1 l of water = 1 kg)
        let draw = mass_flow * spec.water_specific_heat;
        *a.at_mut(wh, wh) -= (spec.ua_waterheater_ambient + draw) / spec.cap_waterheater;
        *b.at_mut(wh, su(ControlId::WaterHeater)) +=
            KILO * spec.cop_waterheater / spec.cap_waterheater;
        *e.at_mut(wh, DisturbanceId::Ambient as usize) +=
            spec.ua_waterheater_ambient / spec.cap_waterheater;
        // Coefficient on the draw channel itself (litres per period).
        *e.at_mut(wh, DisturbanceId::HotWaterDraw as usize) +=
            spec.water_specific_heat * spec.inlet_water_temp / (dt * spec.cap_waterheater);

        a_all.push(a);
        b_all.push(b);
        e_all.push(e);
    }

    Ok(ContinuousCoefficients { variant, n_steps: disturbances.len(), a: a_all, b: b_all, e: e_all })
}

/// Forward-Euler discretization: `A_d = I + dt·A`, `B_d = dt·B`,
/// `E_d = dt·E`. Returns the model plus an optional diagnostic listing the
/// periods where some diagonal of `A_d` went negative (a sign the step is
/// too long for the fastest time constant).
pub fn discretize(
    continuous: &ContinuousCoefficients,
    dt: f64,
) -> Result<(DiscreteModel, Option<String>), ModelError> {
    if !(dt > 0.0) {
        return Err(ModelError::NonPositiveStep(dt));
    }
    let n_x = continuous.variant.active_states().len();
    let mut a_mats = Vec::with_capacity(continuous.n_steps);
    let mut b_mats = Vec::with_capacity(continuous.n_steps);
    let mut e_mats = Vec::with_capacity(continuous.n_steps);
    let mut bad_periods = Vec::new();

    for (t, ((a, b), e)) in continuous.a.iter().zip(&continuous.b).zip(&continuous.e).enumerate() {
        if a.rows != n_x || a.cols != n_x {
            return Err(ModelError::InvalidSpec(format!(
                "A matrix at period {t} has shape {}x{}, expected {n_x}x{n_x}",
                a.rows, a.cols
            )));
        }
        let mut ad = Mat::identity(n_x);
        for i in 0..n_x {
            for j in 0..n_x {
                *ad.at_mut(i, j) += dt * a.at(i, j);
            }
        }
        for i in 0..n_x {
            if ad.at(i, i) < 0.0 {
                bad_periods.push(t);
                break;
            }
        }
        let mut bd = b.clone();
        bd.data.iter_mut().for_each(|v| *v *= dt);
        let mut ed = e.clone();
        ed.data.iter_mut().for_each(|v| *v *= dt);
        a_mats.push(ad);
        b_mats.push(bd);
        e_mats.push(ed);
    }

    let warning = if bad_periods.is_empty() {
        None
    } else {
        Some(format!(
            "Euler step {dt} s produces negative A_d diagonals in {} period(s) (first at {}); \
             consider a shorter step",
            bad_periods.len(),
            bad_periods[0]
        ))
    };

    Ok((
        DiscreteModel {
            variant: continuous.variant,
            dt,
            n_steps: continuous.n_steps,
            a_mats,
            b_mats,
            e_mats,
        },
        warning,
    ))
}

/// Convenience: continuous construction followed by Euler discretization.
pub fn build_discrete_model(
    spec: &BuildingSpec,
    variant: HeaterVariant,
    disturbances: &[DisturbanceVector],
    dt: f64,
) -> Result<DiscreteModel, ModelError> {
    let cont = build_continuous_coefficients(spec, variant, disturbances, dt)?;
    Ok(discretize(&cont, dt)?.0)
}

impl DiscreteModel {
    pub fn n_states(&self) -> usize {
        self.variant.active_states().len()
    }

    pub fn n_controls(&self) -> usize {
        self.variant.active_controls().len()
    }

    /// One exact affine propagation step; no clamping.
    pub fn step(
        &self,
        t: usize,
        x_prev: &StateVector,
        u_prev: &ControlVector,
        z_prev: &DisturbanceVector,
    ) -> Result<StateVector, ModelError> {
        if t >= self.n_steps {
            return Err(ModelError::PeriodOutOfRange { index: t, len: self.n_steps });
        }
        if x_prev.variant() != self.variant {
            return Err(ModelError::VariantMismatch);
        }
        let x = x_prev.active_values();
        let a = &self.a_mats[t];
        let b = &self.b_mats[t];
        let e = &self.e_mats[t];
        let controls = self.variant.active_controls();
        let n_x = self.n_states();

        let mut next = vec![0.0; n_x];
        for i in 0..n_x {
            let mut acc = 0.0;
            for (j, xj) in x.iter().enumerate() {
                acc += a.at(i, j) * xj;
            }
            for (k, &cid) in controls.iter().enumerate() {
                acc += b.at(i, k) * u_prev.get(cid);
            }
            acc += e.at(i, DisturbanceId::Ambient as usize) * z_prev.channel(DisturbanceId::Ambient);
            acc += e.at(i, DisturbanceId::Occupancy as usize)
                * z_prev.channel(DisturbanceId::Occupancy);
            acc += e.at(i, DisturbanceId::HotWaterDraw as usize)
                * z_prev.channel(DisturbanceId::HotWaterDraw);
            next[i] = acc;
        }
        Ok(StateVector::from_active_values(self.variant, &next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decoupled_spec() -> BuildingSpec {
        BuildingSpec {
            ua_room_ambient: 0.0,
            ua_floor_room: 0.0,
            ua_water_floor: 0.0,
            ua_room_fridge: 0.0,
            ua_waterheater_ambient: 0.0,
            cop_hp: 0.0,
            cop_heat: 0.0,
            cop_cool: 0.0,
            cop_fridge: 0.0,
            cop_waterheater: 0.0,
            internal_gain_per_occupancy: 0.0,
            water_specific_heat: 0.0,
            lum_efficacy_daylight: 0.0,
            ..BuildingSpec::default()
        }
    }

    fn no_disturbance() -> DisturbanceVector {
        DisturbanceVector::default()
    }

    #[test]
    fn decoupled_system_has_zero_coefficients() {
        let spec = decoupled_spec();
        let cont = build_continuous_coefficients(
            &spec,
            HeaterVariant::FloorHeating,
            &[no_disturbance(); 4],
            900.0,
        )
        .unwrap();
        for t in 0..4 {
            assert!(cont.a[t].data.iter().all(|&v| v == 0.0));
            assert!(cont.b[t].data.iter().all(|&v| v == 0.0));
            assert!(cont.e[t].data.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn fridge_room_coupling_matches_hand_computed_value() {
        // UA = 0.678 W/°C against 6.65 Wh/°C of fridge capacity.
        let spec = BuildingSpec::default();
        let cont = build_continuous_coefficients(
            &spec,
            HeaterVariant::Hvac,
            &[no_disturbance()],
            900.0,
        )
        .unwrap();
        let v = HeaterVariant::Hvac;
        let rf = v.state_index(StateId::Fridge).unwrap();
        let r = v.state_index(StateId::Room).unwrap();
        let expected = 0.678 / (6.65 * 3600.0);
        assert!((cont.a[0].at(rf, r) - expected).abs() < 1e-12);
        assert!((expected - 2.832e-5).abs() < 1e-8);
    }

    #[test]
    fn hvac_variant_has_three_active_states() {
        let cont = build_continuous_coefficients(
            &BuildingSpec::default(),
            HeaterVariant::Hvac,
            &[no_disturbance()],
            900.0,
        )
        .unwrap();
        assert_eq!(cont.a[0].rows, 3);
        assert_eq!(HeaterVariant::Hvac.active_states().len(), 3);
    }

    #[test]
    fn euler_of_zero_dynamics_is_identity() {
        let spec = decoupled_spec();
        let cont = build_continuous_coefficients(
            &spec,
            HeaterVariant::FloorHeating,
            &[no_disturbance()],
            900.0,
        )
        .unwrap();
        let (model, warning) = discretize(&cont, 900.0).unwrap();
        assert!(warning.is_none());
        assert_eq!(model.a_mats[0], Mat::identity(5));
        assert!(model.b_mats[0].data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fridge_self_coefficient_after_euler() {
        let model = build_discrete_model(
            &BuildingSpec::default(),
            HeaterVariant::Hvac,
            &[no_disturbance()],
            900.0,
        )
        .unwrap();
        let rf = HeaterVariant::Hvac.state_index(StateId::Fridge).unwrap();
        let expected = 1.0 - (0.678 * 900.0) / (6.65 * 3600.0);
        assert!((model.a_mats[0].at(rf, rf) - expected).abs() < 1e-12);
        assert!((expected - 0.974512).abs() < 1e-6);
    }

    #[test]
    fn identity_dynamics_propagate_state_unchanged() {
        let spec = decoupled_spec();
        let model = build_discrete_model(
            &spec,
            HeaterVariant::FloorHeating,
            &[no_disturbance(); 8],
            900.0,
        )
        .unwrap();
        let mut x = StateVector::floor_heating(20.0, 20.0, 20.0, 5.0, 55.0);
        let u = ControlVector { hp: 0.7, al: 0.05, blind: 1.0, ..Default::default() };
        for t in 0..8 {
            x = model.step(t, &x, &u, &no_disturbance()).unwrap();
        }
        // COPs are zero, so even nonzero controls leave the state alone.
        assert_eq!(x, StateVector::floor_heating(20.0, 20.0, 20.0, 5.0, 55.0));
    }

    #[test]
    fn isolated_fridge_drifts_towards_room() {
        let spec = BuildingSpec::default();
        let model =
            build_discrete_model(&spec, HeaterVariant::Hvac, &[no_disturbance()], 900.0).unwrap();
        let x = StateVector::hvac(20.0, 5.0, 55.0);
        let next = model
            .step(0, &x, &ControlVector::default(), &DisturbanceVector { ambient: 20.0, ..Default::default() })
            .unwrap();
        assert!(next.fridge() > 5.0);
        assert!(next.fridge() < 20.0);
    }

    #[test]
    fn heating_strictly_raises_room_over_no_heating() {
        let spec = BuildingSpec::default();
        let z = DisturbanceVector { ambient: 0.0, ..Default::default() };
        let model = build_discrete_model(&spec, HeaterVariant::Hvac, &[z], 900.0).unwrap();
        let x = StateVector::hvac(20.0, 5.0, 55.0);
        let cold = model.step(0, &x, &ControlVector::default(), &z).unwrap();
        let heated = model
            .step(0, &x, &ControlVector { heat: 1.0, ..Default::default() }, &z)
            .unwrap();
        assert!(heated.room() > cold.room());
        // 1 kW at COP 1.67 for 900 s into 3.6 MJ/°C.
        let gain = 1000.0 * 1.67 * 900.0 / 3.6e6;
        assert!((heated.room() - cold.room() - gain).abs() < 1e-12);
    }

    #[test]
    fn monotone_actuation_signs() {
        let spec = BuildingSpec::default();
        let z = DisturbanceVector { ambient: 10.0, ..Default::default() };
        let model =
            build_discrete_model(&spec, HeaterVariant::FloorHeating, &[z], 900.0).unwrap();
        let x = StateVector::floor_heating(20.0, 22.0, 30.0, 5.0, 55.0);
        let base = model.step(0, &x, &ControlVector::default(), &z).unwrap();

        let mut u = ControlVector::default();
        u.rf = 0.35;
        let cooled_fridge = model.step(0, &x, &u, &z).unwrap();
        assert!(cooled_fridge.fridge() < base.fridge());

        let mut u = ControlVector::default();
        u.wh = 1.26;
        let heated_wh = model.step(0, &x, &u, &z).unwrap();
        assert!(heated_wh.waterheater() > base.waterheater());

        let mut u = ControlVector::default();
        u.hp = 1.0;
        let pumped = model.step(0, &x, &u, &z).unwrap();
        assert!(pumped.pipe_water().unwrap() > base.pipe_water().unwrap());
    }

    #[test]
    fn hot_water_draw_pulls_tank_down() {
        let spec = BuildingSpec::default();
        let none = no_disturbance();
        let drawn = DisturbanceVector { hot_water_draw: 8.0, ..Default::default() };
        let model_none =
            build_discrete_model(&spec, HeaterVariant::Hvac, &[none], 900.0).unwrap();
        let model_draw =
            build_discrete_model(&spec, HeaterVariant::Hvac, &[drawn], 900.0).unwrap();
        let x = StateVector::hvac(20.0, 5.0, 55.0);
        let quiet = model_none.step(0, &x, &ControlVector::default(), &none).unwrap();
        let draining = model_draw.step(0, &x, &ControlVector::default(), &drawn).unwrap();
        // Tank above inlet temperature: the draw must lower it vs. no draw.
        assert!(draining.waterheater() < quiet.waterheater());
    }

    #[test]
    fn euler_converges_first_order_on_isolated_fridge() {
        // Isolated fridge against a fixed 20 °C room:
        //   dx/dt = k (20 - x), k = UA/C, analytic x(t) = 20 + (x0-20) e^{-kt}.
        let ua = 0.678;
        let cap = 6.65 * 3600.0;
        let k = ua / cap;
        let x0 = 5.0f64;
        let horizon_s = 6.0 * 3600.0;
        let analytic = 20.0 + (x0 - 20.0) * (-k * horizon_s).exp();

        let mut errors = Vec::new();
        for dt in [900.0, 450.0, 225.0] {
            let steps = (horizon_s / dt) as usize;
            let mut x = x0;
            let ad = 1.0 - k * dt;
            for _ in 0..steps {
                x = ad * x + k * dt * 20.0;
            }
            errors.push((x - analytic).abs());
        }
        let r1 = errors[0] / errors[1];
        let r2 = errors[1] / errors[2];
        assert!((1.8..=2.2).contains(&r1), "ratio {r1}");
        assert!((1.8..=2.2).contains(&r2), "ratio {r2}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut spec = BuildingSpec::default();
        spec.cap_fridge = 0.0;
        assert!(matches!(
            build_continuous_coefficients(&spec, HeaterVariant::Hvac, &[no_disturbance()], 900.0),
            Err(ModelError::InvalidSpec(_))
        ));

        let spec = BuildingSpec::default();
        assert_eq!(
            build_continuous_coefficients(&spec, HeaterVariant::Hvac, &[], 900.0).err(),
            Some(ModelError::EmptyDisturbances)
        );

        let model =
            build_discrete_model(&spec, HeaterVariant::Hvac, &[no_disturbance()], 900.0).unwrap();
        let x_fh = StateVector::floor_heating(20.0, 20.0, 20.0, 5.0, 55.0);
        assert_eq!(
            model.step(0, &x_fh, &ControlVector::default(), &no_disturbance()).err(),
            Some(ModelError::VariantMismatch)
        );
        let x = StateVector::hvac(20.0, 5.0, 55.0);
        assert!(matches!(
            model.step(1, &x, &ControlVector::default(), &no_disturbance()),
            Err(ModelError::PeriodOutOfRange { .. })
        ));
        assert_eq!(x.floor(), None);
    }
}
