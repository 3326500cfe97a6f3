use serde::{Deserialize, Serialize};

use super::dense::{DenseNetwork, DenseNetworkSpec, NetworkWeights};
use crate::error::{Error, Result};
use crate::model::{CensorInterval, PriorSpec};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"MSENN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    Absolute,
    Quantile { tau: f64 },
    NegLogLikelihood,
}

/// Provenance stored next to the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    pub k: usize,
    pub prior: PriorSpec,
    pub censor_interval: Option<CensorInterval>,
    pub training_seed: u64,
    pub loss: LossKind,
    /// What the network is used for, e.g. `"nbe_quantile"` or `"npe_encoder"`.
    pub role: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: DenseNetworkSpec,
    metadata: CheckpointMetadata,
    n_params: usize,
}

/// Layout: magic, u32 version, u64 header length, JSON header, f64 weights (all little endian).
pub fn serialize(network: &DenseNetwork, metadata: &CheckpointMetadata) -> Result<Vec<u8>> {
    let header = Header {
        spec: network.spec().clone(),
        metadata: metadata.clone(),
        n_params: network.n_params(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(17 + json.len() + 8 * network.n_params());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for w in network.weights().as_slice() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    Ok(out)
}

pub fn deserialize(bytes: &[u8]) -> Result<(DenseNetwork, CheckpointMetadata)> {
    let mut rest = bytes;
    let magic = take(&mut rest, 5)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a network checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(&mut rest, 4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let header_len = u64::from_le_bytes(take(&mut rest, 8)?.try_into().unwrap());
    let header_len = usize::try_from(header_len).map_err(|_| Error::Format("header length overflow".into()))?;
    let header: Header = serde_json::from_slice(take(&mut rest, header_len)?)
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    header.spec.validate().map_err(|e| Error::Format(format!("checkpoint spec: {e}")))?;
    if header.n_params != header.spec.n_params() {
        return Err(Error::Format("checkpoint parameter count disagrees with its spec".into()));
    }
    let payload = header
        .n_params
        .checked_mul(8)
        .ok_or_else(|| Error::Format("parameter count overflow".into()))?;
    if rest.len() != payload {
        return Err(Error::Format(format!(
            "checkpoint payload is {} bytes, expected {payload}",
            rest.len()
        )));
    }
    let params: Vec<f64> = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if params.iter().any(|w| !w.is_finite()) {
        return Err(Error::Format("checkpoint contains non-finite weights".into()));
    }
    let weights = NetworkWeights::from_flat(&header.spec, params)?;
    Ok((DenseNetwork::new(header.spec, weights)?, header.metadata))
}

fn take<'a>(rest: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if rest.len() < n {
        return Err(Error::Format("checkpoint is truncated".into()));
    }
    let (head, tail) = rest.split_at(n);
    *rest = tail;
    Ok(head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{InitScheme, OutputActivation};
    use crate::rng_from_seed;

    fn sample() -> (DenseNetwork, CheckpointMetadata) {
        let spec = DenseNetworkSpec::new(
            14,
            vec![8, 8],
            vec![
                OutputActivation::ShiftedSigmoid { lo: 1.0, hi: 10.0 },
                OutputActivation::Identity,
                OutputActivation::Identity,
            ],
        )
        .unwrap();
        let net = DenseNetwork::init(spec, InitScheme::HeUniform, &mut rng_from_seed(11)).unwrap();
        let meta = CheckpointMetadata {
            k: 3,
            prior: PriorSpec::default(),
            censor_interval: Some(CensorInterval::new(0, 10).unwrap()),
            training_seed: 42,
            loss: LossKind::Quantile { tau: 0.975 },
            role: "nbe_quantile".into(),
        };
        (net, meta)
    }

    #[test]
    fn round_trip_is_bitwise() {
        let (net, meta) = sample();
        let bytes = serialize(&net, &meta).unwrap();
        assert_eq!(&bytes[..5], b"MSENN");
        let (back, back_meta) = deserialize(&bytes).unwrap();
        assert_eq!(back_meta, meta);
        assert_eq!(back.spec(), net.spec());
        for (a, b) in back.weights().as_slice().iter().zip(net.weights().as_slice()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncation_and_trailing_bytes_are_rejected() {
        let (net, meta) = sample();
        let bytes = serialize(&net, &meta).unwrap();
        for cut in [0, 3, 9, 20, bytes.len() - 1] {
            assert!(matches!(deserialize(&bytes[..cut]), Err(Error::Format(_))), "cut at {cut}");
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(deserialize(&longer), Err(Error::Format(_))));
    }

    #[test]
    fn wrong_magic_or_version() {
        let (net, meta) = sample();
        let mut bytes = serialize(&net, &meta).unwrap();
        bytes[5] = 99;
        assert!(matches!(deserialize(&bytes), Err(Error::Format(_))));
        bytes[0] = b'X';
        assert!(matches!(deserialize(&bytes), Err(Error::Format(_))));
    }
}
