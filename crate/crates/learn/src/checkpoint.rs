//! Model checkpoints stored in the core tensor container.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use otws_core::data::{Container, Tensor};
use otws_core::{Error, Result};

use crate::models::{Approximator, ApproximatorConfig, Generator, GeneratorConfig};
use crate::nn::{BatchNorm, Layer, Sequential};

pub const LAYER_ORDER: &str = "linear,relu,batch_norm";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub outer_iterations: usize,
    pub samples_seen: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub generator: Generator,
    pub approximator: Approximator,
    pub seed: u64,
    pub progress: Progress,
}

fn matrix_tensor(name: String, a: &Array2<f64>) -> Result<Tensor> {
    Tensor::new(
        name,
        vec![a.nrows(), a.ncols()],
        a.iter().copied().collect(),
    )
}

fn vector_tensor(name: String, a: &Array1<f64>) -> Result<Tensor> {
    Tensor::new(name, vec![a.len()], a.to_vec())
}

fn net_tensors(prefix: &str, net: &Sequential, out: &mut Vec<Tensor>) -> Result<()> {
    for (k, layer) in net.layers.iter().enumerate() {
        match layer {
            Layer::Linear(l) => {
                out.push(matrix_tensor(
                    format!("{prefix}.{k}.weight"),
                    &l.weight.value,
                )?);
                out.push(matrix_tensor(format!("{prefix}.{k}.bias"), &l.bias.value)?);
            }
            Layer::BatchNorm(b) => {
                out.push(matrix_tensor(
                    format!("{prefix}.{k}.gamma"),
                    &b.gamma.value,
                )?);
                out.push(matrix_tensor(format!("{prefix}.{k}.beta"), &b.beta.value)?);
                out.push(vector_tensor(
                    format!("{prefix}.{k}.running_mean"),
                    &b.running_mean,
                )?);
                out.push(vector_tensor(
                    format!("{prefix}.{k}.running_var"),
                    &b.running_var,
                )?);
            }
            Layer::Relu => {}
        }
    }
    Ok(())
}

fn read_into(container: &Container, name: &str, dest: &mut [f64], dims: &[usize]) -> Result<()> {
    let t = container.tensor(name)?;
    if t.dims != dims {
        return Err(Error::Consistency {
            tensor: name.to_string(),
            reason: format!("stored dims {:?}, header implies {:?}", t.dims, dims),
        });
    }
    dest.copy_from_slice(&t.data);
    Ok(())
}

fn load_net(container: &Container, prefix: &str, net: &mut Sequential) -> Result<()> {
    for (k, layer) in net.layers.iter_mut().enumerate() {
        let matrix = |name: &str, a: &mut Array2<f64>| {
            let dims = [a.nrows(), a.ncols()];
            read_into(
                container,
                &format!("{prefix}.{k}.{name}"),
                a.as_slice_mut().expect("standard layout"),
                &dims,
            )
        };
        match layer {
            Layer::Linear(l) => {
                matrix("weight", &mut l.weight.value)?;
                matrix("bias", &mut l.bias.value)?;
            }
            Layer::BatchNorm(b) => {
                matrix("gamma", &mut b.gamma.value)?;
                matrix("beta", &mut b.beta.value)?;
                let dims = [b.running_mean.len()];
                read_into(
                    container,
                    &format!("{prefix}.{k}.running_mean"),
                    b.running_mean.as_slice_mut().unwrap(),
                    &dims,
                )?;
                read_into(
                    container,
                    &format!("{prefix}.{k}.running_var"),
                    b.running_var.as_slice_mut().unwrap(),
                    &dims,
                )?;
            }
            Layer::Relu => {}
        }
    }
    Ok(())
}

impl Checkpoint {
    pub fn to_container(&self) -> Result<Container> {
        let header = json!({
            "generator": self.generator.config,
            "approximator": self.approximator.config,
            "layer_order": LAYER_ORDER,
            "batch_norm": { "eps": BatchNorm::EPS, "momentum": BatchNorm::MOMENTUM },
            "seed": self.seed,
            "progress": self.progress,
        });
        let mut tensors = Vec::new();
        net_tensors("generator", &self.generator.net, &mut tensors)?;
        net_tensors("approximator", &self.approximator.net, &mut tensors)?;
        Ok(Container { header, tensors })
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let field = |key: &str| {
            c.header.get(key).cloned().ok_or_else(|| Error::Format {
                offset: 0,
                reason: format!("checkpoint header lacks `{key}`"),
            })
        };
        let parse = |key: &str, e: serde_json::Error| Error::Format {
            offset: 0,
            reason: format!("checkpoint header `{key}`: {e}"),
        };
        let gcfg: GeneratorConfig =
            serde_json::from_value(field("generator")?).map_err(|e| parse("generator", e))?;
        let acfg: ApproximatorConfig =
            serde_json::from_value(field("approximator")?).map_err(|e| parse("approximator", e))?;
        let order = field("layer_order")?;
        if order != LAYER_ORDER {
            return Err(Error::Format {
                offset: 0,
                reason: format!("unsupported layer order {order}"),
            });
        }
        let seed: u64 = serde_json::from_value(field("seed")?).map_err(|e| parse("seed", e))?;
        let progress: Progress =
            serde_json::from_value(field("progress")?).map_err(|e| parse("progress", e))?;
        gcfg.validate()?;

        // Shapes come from the header; values are overwritten below.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut generator = Generator::new(gcfg, &mut rng)?;
        let mut approximator = Approximator::new(acfg, &mut rng)?;
        load_net(c, "generator", &mut generator.net)?;
        load_net(c, "approximator", &mut approximator.net)?;
        let out = Self {
            generator,
            approximator,
            seed,
            progress,
        };
        let expected = out.to_container()?.tensors.len();
        if c.tensors.len() != expected {
            let known: Vec<_> = out
                .to_container()?
                .tensors
                .into_iter()
                .map(|t| t.name)
                .collect();
            let extra = c
                .tensors
                .iter()
                .find(|t| !known.contains(&t.name))
                .map(|t| t.name.clone())
                .unwrap_or_default();
            return Err(Error::Consistency {
                tensor: extra,
                reason: "not part of the described models".into(),
            });
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gcfg = GeneratorConfig {
            latent_dim: 8,
            n: 9,
            lambda: 0.3,
            c: 1e-2,
        };
        let mut approximator = Approximator::new(ApproximatorConfig { n: 9 }, &mut rng).unwrap();
        if let Layer::BatchNorm(bn) = &mut approximator.net.layers[2] {
            bn.running_mean.fill(0.125);
            bn.running_var.fill(3.5);
        }
        Checkpoint {
            generator: Generator::new(gcfg, &mut rng).unwrap(),
            approximator,
            seed: 77,
            progress: Progress {
                outer_iterations: 3,
                samples_seen: 60,
            },
        }
    }

    fn values(net: &Sequential) -> Vec<u64> {
        let mut out = Vec::new();
        for t in {
            let mut v = Vec::new();
            net_tensors("x", net, &mut v).unwrap();
            v
        } {
            out.extend(t.data.iter().map(|x| x.to_bits()));
        }
        out
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.to_container().unwrap().encode().unwrap();
        let back = Checkpoint::from_container(&Container::decode(&bytes).unwrap()).unwrap();
        assert_eq!(values(&back.generator.net), values(&ck.generator.net));
        assert_eq!(values(&back.approximator.net), values(&ck.approximator.net));
        assert_eq!(
            (back.seed, back.progress.clone()),
            (77, ck.progress.clone())
        );
        assert_eq!(back.generator.config, ck.generator.config);
    }

    #[test]
    fn header_with_wrong_dims_names_the_tensor() {
        let mut c = sample().to_container().unwrap();
        c.header["approximator"]["n"] = json!(4);
        match Checkpoint::from_container(&c) {
            Err(Error::Consistency { tensor, .. }) => assert_eq!(tensor, "approximator.0.weight"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn foreign_tensor_is_rejected() {
        let mut c = sample().to_container().unwrap();
        c.tensors
            .push(Tensor::new("stray", vec![1], vec![0.0]).unwrap());
        assert!(
            matches!(Checkpoint::from_container(&c), Err(Error::Consistency { tensor, .. }) if tensor == "stray")
        );
    }

    #[test]
    fn truncated_file_is_corruption() {
        let bytes = sample().to_container().unwrap().encode().unwrap();
        let cut = &bytes[..bytes.len() - 9];
        assert!(matches!(Container::decode(cut), Err(Error::Corruption(_))));
    }
}
