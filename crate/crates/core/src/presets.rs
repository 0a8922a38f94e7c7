//! Shipped configurations.

use std::collections::BTreeMap;

use crate::kernel::{GammaPair, GammaSpec, KernelConfig, LambdaSpec};
use crate::space::SpaceConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub space: SpaceConfig,
    pub kernel: KernelConfig,
}

pub const NAMES: [&str; 5] = ["q2-stable-alpha1", "q2-perturbed", "q3-mixed", "qp-haar", "q2-wide"];

pub fn preset(name: &str) -> Option<Preset> {
    let p = match name {
        "q2-stable-alpha1" => Preset {
            name: "q2-stable-alpha1",
            description: "Q_2 on levels 0..2, geometric λ = 2^m (α = 1)",
            space: SpaceConfig::padic(2, 0, 2),
            kernel: KernelConfig::geometric(1.0),
        },
        "q2-perturbed" => Preset {
            name: "q2-perturbed",
            description: "q2-stable-alpha1 times 1 + ε s(x)s(y), ε = 0.5, s = (+,+,+,-); breaks ball-wise constancy at level 1",
            space: SpaceConfig::padic(2, 0, 2),
            kernel: KernelConfig::Perturbed {
                base: Box::new(KernelConfig::geometric(1.0)),
                epsilon: 0.5,
                signs: "+++-".into(),
            },
        },
        "q3-mixed" => Preset {
            name: "q3-mixed",
            description: "Q_3 on levels 0..2, two geometric components (α = 1, 0.5) selected by separation level, one ball-pair override",
            space: SpaceConfig::padic(3, 0, 2),
            kernel: KernelConfig::Mixed {
                components: vec![LambdaSpec::Geometric { alpha: 1.0 }, LambdaSpec::Geometric { alpha: 0.5 }],
                gamma: GammaSpec {
                    default: 1,
                    by_level: BTreeMap::from([("1".to_string(), 1), ("2".to_string(), 2)]),
                    pairs: vec![GammaPair {
                        level: 1,
                        i: "0".into(),
                        j: "2".into(),
                        component: 2,
                    }],
                },
            },
        },
        "qp-haar" => Preset {
            name: "qp-haar",
            description: "Q_5 on levels 0..2 with Haar measure, geometric λ = 5^{0.8 m}",
            space: SpaceConfig::padic(5, 0, 2),
            kernel: KernelConfig::geometric(0.8),
        },
        "q2-wide" => Preset {
            name: "q2-wide",
            description: "Q_2 on levels -1..3, geometric λ = 2^m; distances up to 2",
            space: SpaceConfig::padic(2, -1, 3),
            kernel: KernelConfig::geometric(1.0),
        },
        _ => return None,
    };
    Some(p)
}
