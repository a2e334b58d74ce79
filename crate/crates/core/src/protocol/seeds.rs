/// What a derived seed is used for. Each purpose gets an independent
/// stream, so changing one stage never shifts the randomness of another
/// and runs that differ only in strategy stay paired.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    Data,
    ModelInit,
    HeadInit,
    /// Initial exemplar subset for one class.
    ExemplarInit {
        class: usize,
    },
    Partition,
    Discard,
}

impl Purpose {
    fn code(self) -> (u64, u64) {
        match self {
            Purpose::Data => (1, 0),
            Purpose::ModelInit => (2, 0),
            Purpose::HeadInit => (3, 0),
            Purpose::ExemplarInit { class } => (4, class as u64),
            Purpose::Partition => (5, 0),
            Purpose::Discard => (6, 0),
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sub-seed for `(phase, purpose)` under a master seed.
pub fn derive_seed(master: u64, phase: usize, purpose: Purpose) -> u64 {
    let (kind, extra) = purpose.code();
    [phase as u64, kind, extra]
        .into_iter()
        .fold(splitmix(master), |acc, v| splitmix(acc ^ splitmix(v)))
}
