use crate::arch::HardwareParams;
use crate::gradient::Scalar;
use crate::mapping::{free_slots, Factors, LoopOrdering, Order};
use crate::workload::{Dim, LayerShape};

pub const NUM_FEATURES: usize = 9 + 16 + 3 + 9;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "ln_R", "ln_S", "ln_P", "ln_Q", "ln_C", "ln_K", "ln_N", "ln_Pstride", "ln_Qstride",
    "ln_fS1C", "ln_fT1R", "ln_fT1S", "ln_fT1P", "ln_fT1Q", "ln_fT1C", "ln_fT1K", "ln_fT1N",
    "ln_fS2K", "ln_fT2R", "ln_fT2S", "ln_fT2P", "ln_fT2Q", "ln_fT2C", "ln_fT2K", "ln_fT2N",
    "ln_pe_side", "ln_acc_words", "ln_sp_words",
    "L1_WS", "L1_IS", "L1_OS", "L2_WS", "L2_IS", "L2_OS", "L3_WS", "L3_IS", "L3_OS",
];

/// Raw (unnormalized) model inputs: log layer shape, log free factors, log
/// hardware parameters and a one-hot ordering per level.
pub fn features<S: Scalar>(
    layer: &LayerShape,
    factors: &Factors<S>,
    ordering: &LoopOrdering,
    hw: &HardwareParams<S>,
) -> Vec<S> {
    let mut out = Vec::with_capacity(NUM_FEATURES);
    for d in Dim::ALL {
        out.push(S::constant((layer.extent(d) as f64).ln()));
    }
    out.push(S::constant((layer.p_stride as f64).ln()));
    out.push(S::constant((layer.q_stride as f64).ln()));
    for slot in free_slots() {
        out.push(factors.get(slot).ln());
    }
    out.push(hw.pe_side.ln());
    out.push(hw.acc_words.ln());
    out.push(hw.sp_words.ln());
    for level in 1..=3 {
        for o in Order::ALL {
            out.push(S::constant(if ordering.at(level) == o { 1.0 } else { 0.0 }));
        }
    }
    out
}
