//! Binary model checkpoints.
//!
//! Layout (all integers little-endian `u32` unless noted):
//!
//! | field                | size            |
//! |----------------------|-----------------|
//! | magic `"FFCK"`       | 4 bytes         |
//! | version              | 4               |
//! | stage count `n`      | 4               |
//! | widths               | 4·n             |
//! | strides              | 4·n             |
//! | fusion code          | 4               |
//! | correlation radius   | 4               |
//! | refinement convs     | 4               |
//! | refinement radius    | 4               |
//! | condition encoder    | 4 (0 or 1)      |
//! | image channels       | 4               |
//! | tensor count         | 4               |
//! | total scalar count   | 8 (`u64`)       |
//! | payload              | 4·total (`f32`) |
//!
//! The payload holds every parameter in declaration order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{FlowNet, FusionKind, ModelSpec};

use super::write_atomic;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Largest stage count accepted when decoding, to bound allocations on corrupt input.
const MAX_STAGES: usize = 64;
/// Bounds on the remaining architecture fields, far above any practical model,
/// so that planning the layout of a corrupt header cannot overflow.
const MAX_WIDTH: usize = 1 << 16;
const MAX_STRIDE: usize = 64;
const MAX_RADIUS: usize = 64;
const MAX_REFINE_CONVS: usize = 64;
const MAX_IMAGE_CHANNELS: usize = 64;

fn ck_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Checkpoint(msg.into()))
}

pub fn encode_checkpoint(net: &FlowNet<f32>) -> Vec<u8> {
    let spec = net.spec();
    let total = net.param_count();
    let mut out = Vec::with_capacity(64 + 4 * total);
    let u32 = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    u32(&mut out, CHECKPOINT_VERSION as usize);
    u32(&mut out, spec.stages());
    for &w in &spec.widths {
        u32(&mut out, w);
    }
    for &s in &spec.strides {
        u32(&mut out, s);
    }
    u32(&mut out, spec.fusion.code() as usize);
    u32(&mut out, spec.corr_radius);
    u32(&mut out, spec.refine_convs);
    u32(&mut out, spec.refine_corr_radius);
    u32(&mut out, spec.use_cfe as usize);
    u32(&mut out, spec.image_channels);
    u32(&mut out, net.params().len());
    out.extend_from_slice(&(total as u64).to_le_bytes());
    for p in net.params() {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.bytes.len() => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => Err(Error::Format {
                offset: self.pos,
                msg: format!("truncated checkpoint: {what} needs {n} bytes, {} remain", self.bytes.len() - self.pos),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

/// Decodes a checkpoint, rebuilding the network from the stored architecture.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<FlowNet<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format { offset: 0, msg: "not a checkpoint (bad magic)".into() });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION as usize {
        return ck_err(format!("unsupported version {version}, expected {CHECKPOINT_VERSION}"));
    }
    let n = r.u32("stage count")?;
    if n == 0 || n > MAX_STAGES {
        return Err(Error::Format { offset: 8, msg: format!("implausible stage count {n}") });
    }
    let widths = (0..n).map(|_| r.u32("width")).collect::<Result<Vec<_>>>()?;
    let strides = (0..n).map(|_| r.u32("stride")).collect::<Result<Vec<_>>>()?;
    let code = r.u32("fusion code")? as u32;
    let fusion = FusionKind::from_code(code)
        .ok_or_else(|| Error::Format { offset: r.pos - 4, msg: format!("unknown fusion code {code}") })?;
    let corr_radius = r.u32("correlation radius")?;
    let refine_convs = r.u32("refinement convs")?;
    let refine_corr_radius = r.u32("refinement radius")?;
    let use_cfe = match r.u32("condition-encoder flag")? {
        0 => false,
        1 => true,
        v => return Err(Error::Format { offset: r.pos - 4, msg: format!("bad condition-encoder flag {v}") }),
    };
    let image_channels = r.u32("image channels")?;
    let bounded = widths.iter().all(|&w| w <= MAX_WIDTH)
        && strides.iter().all(|&s| s <= MAX_STRIDE)
        && corr_radius <= MAX_RADIUS
        && refine_corr_radius <= MAX_RADIUS
        && refine_convs <= MAX_REFINE_CONVS
        && image_channels <= MAX_IMAGE_CHANNELS;
    if !bounded {
        return ck_err("stored architecture exceeds the supported size bounds");
    }
    let spec = ModelSpec { widths, strides, fusion, corr_radius, refine_convs, refine_corr_radius, use_cfe, image_channels };
    spec.validate().map_err(|e| Error::Checkpoint(format!("stored architecture is invalid: {e}")))?;
    let tensors = r.u32("tensor count")?;
    let total = r.u64("scalar count")?;
    // Check the payload size against the remaining bytes before allocating anything.
    let remaining = (bytes.len() - r.pos) as u64;
    if total.checked_mul(4) != Some(remaining) {
        return Err(Error::Format {
            offset: r.pos,
            msg: format!("payload declares {total} values but {remaining} bytes follow"),
        });
    }
    let planned = FlowNet::<f32>::planned_param_count(&spec)? as u64;
    if total != planned {
        return ck_err(format!("header declares {total} values, architecture has {planned}"));
    }
    let mut net = FlowNet::<f32>::zeros(&spec)?;
    if tensors != net.params().len() || total != net.param_count() as u64 {
        return ck_err(format!(
            "header declares {tensors} tensors / {total} values, architecture has {} / {}",
            net.params().len(),
            net.param_count()
        ));
    }
    for i in 0..tensors {
        let len = net.params()[i].numel();
        let raw = r.take(4 * len, "parameter payload")?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        net.set_param(i, values)?;
    }
    Ok(net)
}

/// First structural difference between two architectures, if any.
pub fn spec_mismatch(expected: &ModelSpec, found: &ModelSpec) -> Option<String> {
    for s in 0..expected.stages().max(found.stages()) {
        let e = (expected.widths.get(s), expected.strides.get(s));
        let f = (found.widths.get(s), found.strides.get(s));
        if e != f {
            let show = |(w, st): (Option<&usize>, Option<&usize>)| match (w, st) {
                (Some(w), Some(st)) => format!("width {w}, stride {st}"),
                _ => "absent".to_string(),
            };
            return Some(format!("stage {s} differs: expected {}, checkpoint has {}", show(e), show(f)));
        }
    }
    let fields = [
        ("fusion", expected.effective_fusion().to_string(), found.effective_fusion().to_string()),
        ("corr_radius", expected.corr_radius.to_string(), found.corr_radius.to_string()),
        ("refine_convs", expected.refine_convs.to_string(), found.refine_convs.to_string()),
        ("refine_corr_radius", expected.refine_corr_radius.to_string(), found.refine_corr_radius.to_string()),
        ("use_cfe", expected.use_cfe.to_string(), found.use_cfe.to_string()),
        ("image_channels", expected.image_channels.to_string(), found.image_channels.to_string()),
    ];
    fields
        .into_iter()
        .find(|(_, e, f)| e != f)
        .map(|(name, e, f)| format!("{name} differs: expected {e}, checkpoint has {f}"))
}

pub fn save_checkpoint(net: &FlowNet<f32>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(net))
}

/// Loads a checkpoint; with `expected`, a structurally different architecture is an error.
pub fn load_checkpoint(path: &Path, expected: Option<&ModelSpec>) -> Result<FlowNet<f32>> {
    let bytes = std::fs::read(path)?;
    let net = decode_checkpoint(&bytes)?;
    if let Some(spec) = expected {
        if let Some(diff) = spec_mismatch(spec, net.spec()) {
            return ck_err(format!("{}: {diff}", path.display()));
        }
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelSpec {
        ModelSpec { widths: vec![4, 6], strides: vec![2, 2], corr_radius: 1, ..ModelSpec::default() }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let net = FlowNet::<f32>::build(&small(), 3).unwrap();
        let back = decode_checkpoint(&encode_checkpoint(&net)).unwrap();
        assert_eq!(back.spec(), net.spec());
        for (a, b) in net.params().iter().zip(back.params()) {
            assert!(a.bitwise_eq(b));
        }
        assert_eq!(encode_checkpoint(&back), encode_checkpoint(&net));
    }

    #[test]
    fn zero_model_has_zero_payload() {
        let net = FlowNet::<f32>::zeros(&small()).unwrap();
        let bytes = encode_checkpoint(&net);
        let payload = &bytes[bytes.len() - 4 * net.param_count()..];
        assert!(payload.iter().all(|&b| b == 0));
    }

    #[test]
    fn mismatch_names_first_differing_stage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&FlowNet::<f32>::build(&small(), 1).unwrap(), &path).unwrap();
        let mut other = small();
        other.widths[1] = 8;
        let err = load_checkpoint(&path, Some(&other)).unwrap_err().to_string();
        assert!(err.contains("stage 1"), "{err}");
        assert!(load_checkpoint(&path, Some(&small())).is_ok());
    }

    #[test]
    fn truncations_and_version_are_rejected() {
        let bytes = encode_checkpoint(&FlowNet::<f32>::build(&small(), 1).unwrap());
        for cut in 0..bytes.len() {
            assert!(decode_checkpoint(&bytes[..cut]).is_err(), "prefix {cut} accepted");
        }
        let mut v = bytes.clone();
        v[4] = 9;
        assert!(matches!(decode_checkpoint(&v), Err(Error::Checkpoint(_))));
    }
}
