//! Named f32 tensors in the safetensors container format.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

pub type Tensors = Vec<(String, ArrayD<f32>)>;

pub fn to_bytes(
    tensors: &[(String, ArrayD<f32>)],
    metadata: Option<HashMap<String, String>>,
) -> Result<Vec<u8>, String> {
    let raw: Vec<(String, Vec<u8>, Vec<usize>)> = tensors
        .iter()
        .map(|(name, a)| {
            let bytes = a.iter().flat_map(|v| v.to_le_bytes()).collect();
            (name.clone(), bytes, a.shape().to_vec())
        })
        .collect();
    let views = raw
        .iter()
        .map(|(name, bytes, shape)| {
            TensorView::new(Dtype::F32, shape.clone(), bytes)
                .map(|v| (name.as_str(), v))
                .map_err(|e| e.to_string())
        })
        .collect::<Result<Vec<_>, _>>()?;
    safetensors::serialize(views, metadata).map_err(|e| e.to_string())
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Tensors, HashMap<String, String>), String> {
    let (_, meta) = SafeTensors::read_metadata(bytes).map_err(|e| e.to_string())?;
    let st = SafeTensors::deserialize(bytes).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(st.len());
    for (name, view) in st.tensors() {
        let data: Vec<f32> = match view.dtype() {
            Dtype::F32 => view
                .data()
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
            Dtype::F64 => view
                .data()
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")) as f32)
                .collect(),
            // Integer counters such as `num_batches_tracked` carry no weights.
            Dtype::I64 | Dtype::I32 => continue,
            other => return Err(format!("tensor `{name}` has unsupported dtype {other:?}")),
        };
        let arr = ArrayD::from_shape_vec(IxDyn(view.shape()), data).map_err(|e| e.to_string())?;
        out.push((name, arr));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok((out, meta.metadata().clone().unwrap_or_default()))
}

pub fn read(path: &Path) -> Result<(Tensors, HashMap<String, String>), String> {
    let bytes = std::fs::read(path).map_err(|e| e.to_string())?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_metadata() {
        let t = vec![
            (
                "a.weight".to_string(),
                ArrayD::from_shape_fn(IxDyn(&[2, 3]), |i| i[0] as f32 - i[1] as f32 * 0.5),
            ),
            ("b".to_string(), ArrayD::from_elem(IxDyn(&[4]), 1.25f32)),
        ];
        let meta = HashMap::from([("k".to_string(), "v".to_string())]);
        let bytes = to_bytes(&t, Some(meta.clone())).unwrap();
        let (back, m) = from_bytes(&bytes).unwrap();
        assert_eq!(back, t);
        assert_eq!(m, meta);
    }

    #[test]
    fn garbage_is_an_error() {
        assert!(from_bytes(b"not a tensor file").is_err());
    }
}
