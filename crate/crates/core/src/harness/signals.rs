use crate::dynamics::{ControlValue, ModelKind};
use crate::error::{Error, Result};

/// A closed-form test control with its evaluation horizon.
#[derive(Clone, Copy, Debug)]
pub struct NamedSignal {
    pub id: &'static str,
    pub label: &'static str,
    /// Plant family the signal drives.
    pub model: ModelKind,
    pub horizon: f64,
    law: fn(f64) -> ControlValue,
}

impl NamedSignal {
    pub fn eval(&self, t: f64) -> ControlValue {
        (self.law)(t)
    }
}

const REGISTRY: &[NamedSignal] = &[
    NamedSignal {
        id: "uni-a",
        label: "Sinusoidal turning",
        model: ModelKind::Unicycle,
        horizon: 10.0,
        law: |t| [0.2 + 0.6 * (0.75 * t).sin(), 0.4 * (0.8 * t).cos()],
    },
    NamedSignal {
        id: "uni-b",
        label: "Linear speedup with oscillating steering",
        model: ModelKind::Unicycle,
        horizon: 10.0,
        law: |t| [0.5 + 0.05 * t, 0.1 * (0.5 * t).sin()],
    },
    NamedSignal {
        id: "uni-c",
        label: "Circular pattern at constant speed",
        model: ModelKind::Unicycle,
        horizon: 10.0,
        law: |_| [1.0, 0.2],
    },
    NamedSignal {
        id: "sf-a",
        label: "Coupled oscillations",
        model: ModelKind::SlipFree,
        horizon: 10.0,
        law: |t| [0.1 * (0.4 * t).sin(), -0.3 * (0.6 * t).cos()],
    },
    NamedSignal {
        id: "sf-b",
        label: "Slow ramp throttle with constant steering",
        model: ModelKind::SlipFree,
        horizon: 10.0,
        law: |t| [0.05 * t * (-0.3 * t).exp(), 0.2],
    },
    NamedSignal {
        id: "sf-c",
        label: "Pulse acceleration and steering",
        model: ModelKind::SlipFree,
        horizon: 10.0,
        law: |t| [0.1 * (0.5 * t).sin().powi(2), 0.25 * (0.25 * t).cos().powi(2)],
    },
    NamedSignal {
        id: "slip-a",
        label: "High frequency steering",
        model: ModelKind::Slip,
        horizon: 5.0,
        law: |t| [0.2 + 0.2 * (0.3 * t).cos(), 0.5 * t.sin()],
    },
    NamedSignal {
        id: "slip-b",
        label: "Pulse acceleration and steering",
        model: ModelKind::Slip,
        horizon: 5.0,
        law: |t| [0.4 * (0.5 * t).sin().powi(2), 0.02 * (0.25 * t).cos().powi(2)],
    },
    NamedSignal {
        id: "slip-c",
        label: "Piecewise trigonometric composition",
        model: ModelKind::Slip,
        horizon: 5.0,
        law: |t| [0.4 * (0.5 * t).tanh(), 0.3 * (0.5 * t).sin() / (0.1 * t + 1.0)],
    },
    NamedSignal {
        id: "exp-iii",
        label: "Exponential throttle ramp, fixed steering",
        model: ModelKind::ExperimentalPrior,
        horizon: 5.0,
        law: |t| [0.05 * t * (0.05 * t).exp(), 0.1],
    },
];

pub fn signal_ids() -> impl Iterator<Item = &'static str> {
    REGISTRY.iter().map(|s| s.id)
}

pub fn signal_registry(id: &str) -> Result<NamedSignal> {
    REGISTRY
        .iter()
        .find(|s| s.id == id)
        .copied()
        .ok_or_else(|| Error::UnknownSignal {
            id: id.to_string(),
            valid: signal_ids().collect::<Vec<_>>().join(", "),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_at_zero() {
        assert_eq!(signal_registry("uni-c").unwrap().eval(0.0), [1.0, 0.2]);
        assert_eq!(signal_registry("slip-a").unwrap().eval(0.0), [0.4, 0.0]);
        assert_eq!(signal_registry("exp-iii").unwrap().eval(0.0), [0.0, 0.1]);
        assert_eq!(signal_registry("sf-a").unwrap().eval(0.0), [0.0, -0.3]);
        assert_eq!(signal_registry("slip-c").unwrap().eval(0.0), [0.0, 0.0]);
    }

    #[test]
    fn spot_values() {
        let t = 2.0f64;
        assert_eq!(signal_registry("uni-b").unwrap().eval(t), [0.6, 0.1 * 1f64.sin()]);
        let sf = signal_registry("sf-b").unwrap().eval(t);
        assert!((sf[0] - 0.1 * (-0.6f64).exp()).abs() < 1e-15);
        let e = signal_registry("exp-iii").unwrap().eval(t);
        assert!((e[0] - 0.1 * 0.1f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn horizons_and_ids() {
        assert_eq!(signal_ids().count(), 10);
        for id in signal_ids() {
            let s = signal_registry(id).unwrap();
            let expected = match s.model {
                ModelKind::Unicycle | ModelKind::SlipFree => 10.0,
                _ => 5.0,
            };
            assert_eq!(s.horizon, expected, "{id}");
        }
    }

    #[test]
    fn unknown_id_lists_valid() {
        match signal_registry("uni-z") {
            Err(Error::UnknownSignal { id, valid }) => {
                assert_eq!(id, "uni-z");
                assert!(valid.contains("slip-b") && valid.contains("exp-iii"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
