//! Architecture catalog.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::{Activation, LayerSpec};
use crate::model::Model;
use crate::rng::Rng;
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arch {
    Cnn5,
    Cnn6,
    Cnn7,
    Vgg19,
    Vgg19Trunc,
    VggS,
}

impl Arch {
    pub const ALL: [Arch; 6] = [Arch::Cnn5, Arch::Cnn6, Arch::Cnn7, Arch::Vgg19, Arch::Vgg19Trunc, Arch::VggS];

    pub fn id(self) -> &'static str {
        match self {
            Arch::Cnn5 => "CNN5",
            Arch::Cnn6 => "CNN6",
            Arch::Cnn7 => "CNN7",
            Arch::Vgg19 => "VGG19",
            Arch::Vgg19Trunc => "VGG19_TRUNC",
            Arch::VggS => "VGG_S",
        }
    }

    pub fn is_cnn(self) -> bool {
        matches!(self, Arch::Cnn5 | Arch::Cnn6 | Arch::Cnn7)
    }

    pub fn input_shape(self) -> [usize; 3] {
        match self {
            Arch::VggS => [64, 64, 3],
            _ => [224, 224, 3],
        }
    }

    /// Hidden dense width and conv activation used when not overridden.
    pub fn cnn_defaults(self) -> Option<(usize, Activation)> {
        match self {
            Arch::Cnn5 => Some((409, Activation::Relu)),
            Arch::Cnn6 => Some((449, Activation::Tanh)),
            Arch::Cnn7 => Some((87, Activation::Relu)),
            _ => None,
        }
    }

    pub fn default_classes(self) -> usize {
        match self {
            Arch::Vgg19 => 1000,
            _ => 3,
        }
    }

    pub fn layer_specs(self, params: &ArchParams) -> Result<Vec<LayerSpec>> {
        let classes = params.classes.unwrap_or(self.default_classes());
        if classes < 2 {
            return Err(Error::InvalidParam(format!("classes must be >= 2, got {classes}")));
        }
        if !self.is_cnn() && (params.num_dense_nodes.is_some() || params.activation.is_some()) {
            return Err(Error::InvalidParam(format!(
                "num_dense_nodes and activation apply only to CNN architectures, not {self}"
            )));
        }
        let mut specs = Vec::new();
        match self {
            Arch::Cnn5 | Arch::Cnn6 | Arch::Cnn7 => {
                let (nodes, act) = self.cnn_defaults().expect("cnn");
                let nodes = params.num_dense_nodes.unwrap_or(nodes);
                let act = params.activation.unwrap_or(act);
                if nodes == 0 {
                    return Err(Error::InvalidParam("num_dense_nodes must be >= 1".into()));
                }
                if act == Activation::Softmax {
                    return Err(Error::InvalidParam("conv activation cannot be softmax".into()));
                }
                let depth = match self {
                    Arch::Cnn5 => 5,
                    Arch::Cnn6 => 6,
                    _ => 7,
                };
                for (i, f) in [32, 64, 128, 256, 256, 256, 256].iter().take(depth).enumerate() {
                    specs.push(LayerSpec::conv(format!("conv{}", i + 1), *f, act));
                    specs.push(LayerSpec::pool(format!("pool{}", i + 1)));
                }
                specs.push(LayerSpec::flatten("flatten"));
                specs.push(LayerSpec::dense("dense", nodes, Activation::Relu));
                specs.push(LayerSpec::dense("predictions", classes, Activation::Softmax));
            }
            Arch::Vgg19 | Arch::Vgg19Trunc | Arch::VggS => {
                let widths = if self == Arch::VggS {
                    [8, 16, 32, 64, 64]
                } else {
                    [64, 128, 256, 512, 512]
                };
                for (b, (&w, convs)) in widths.iter().zip([2, 2, 4, 4, 4]).enumerate() {
                    for c in 0..convs {
                        specs.push(LayerSpec::conv(format!("block{}_conv{}", b + 1, c + 1), w, Activation::Relu));
                    }
                    specs.push(LayerSpec::pool(format!("block{}_pool", b + 1)));
                }
                specs.push(LayerSpec::flatten("flatten"));
                if self == Arch::Vgg19 {
                    specs.push(LayerSpec::dense("fc1", 4096, Activation::Relu));
                    specs.push(LayerSpec::dense("fc2", 4096, Activation::Relu));
                    specs.push(LayerSpec::dense("predictions", classes, Activation::Softmax));
                } else {
                    specs.push(LayerSpec::dense("predictions_traffic", classes, Activation::Softmax));
                }
            }
        }
        Ok(specs)
    }

    pub fn build<T: Real>(self, params: &ArchParams, rng: &Rng) -> Result<Model<T>> {
        Model::from_specs(self.id(), &self.input_shape(), self.layer_specs(params)?, rng)
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Arch::ALL
            .into_iter()
            .find(|a| a.id() == norm)
            .ok_or_else(|| Error::InvalidParam(format!("unknown architecture `{s}`")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ArchParams {
    pub num_dense_nodes: Option<usize>,
    /// Conv-stack activation for CNN architectures.
    pub activation: Option<Activation>,
    pub classes: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape_walk(arch: Arch) -> Vec<(String, Vec<usize>, usize)> {
        let mut shape = arch.input_shape().to_vec();
        let mut out = Vec::new();
        for s in arch.layer_specs(&ArchParams::default()).unwrap() {
            let n = s.param_count(&shape);
            shape = s.output_shape(&shape).unwrap();
            out.push((s.name.clone(), shape.clone(), n));
        }
        out
    }

    #[test]
    fn parse_ids() {
        for a in Arch::ALL {
            assert_eq!(a.id().parse::<Arch>().unwrap(), a);
        }
        assert_eq!("vgg19_trunc".parse::<Arch>().unwrap(), Arch::Vgg19Trunc);
        assert!("resnet".parse::<Arch>().is_err());
    }

    #[test]
    fn bottleneck_widths() {
        let flat = |a| shape_walk(a).into_iter().find(|(n, _, _)| n == "flatten").unwrap().1;
        assert_eq!(flat(Arch::Cnn5), vec![12_544]);
        assert_eq!(flat(Arch::Vgg19), vec![25_088]);
        assert_eq!(flat(Arch::Vgg19Trunc), vec![25_088]);
        assert_eq!(flat(Arch::VggS), vec![256]);
    }

    #[test]
    fn block5_conv1_accounting() {
        let w = shape_walk(Arch::Vgg19);
        let b = w.iter().find(|(n, _, _)| n == "block5_conv1").unwrap();
        assert_eq!(b.1, vec![14, 14, 512]);
        assert_eq!(b.2, 2_359_808);
    }

    #[test]
    fn invalid_params() {
        let p = ArchParams {
            num_dense_nodes: Some(0),
            ..Default::default()
        };
        assert!(Arch::Cnn5.layer_specs(&p).is_err());
        let p = ArchParams {
            num_dense_nodes: Some(10),
            ..Default::default()
        };
        assert!(Arch::Vgg19.layer_specs(&p).is_err());
    }

    #[test]
    fn cnn6_uses_tanh_convs() {
        let specs = Arch::Cnn6.layer_specs(&ArchParams::default()).unwrap();
        assert_eq!(specs[0].activation(), Some(Activation::Tanh));
        assert_eq!(specs.iter().filter(|s| s.name.starts_with("conv")).count(), 6);
    }
}
