//! Resolution ladder, fade-in coefficient and the real-data pyramid.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{avg_pool3d, upsample_nearest3d, Shape3d, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Stable,
    Transition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthSchedule {
    pub ladder: Vec<Shape3d>,
    pub images_per_phase: u64,
    pub images_per_transition: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseState {
    pub rung_index: usize,
    /// Images consumed since the current phase (stable or transition) began.
    pub images_seen: u64,
    pub mode: Mode,
}

impl Default for PhaseState {
    fn default() -> Self {
        Self {
            rung_index: 0,
            images_seen: 0,
            mode: Mode::Stable,
        }
    }
}

/// Rungs (4,4,4) through (32,256,256).
pub fn default_ladder() -> Vec<Shape3d> {
    [
        [4, 4, 4],
        [8, 8, 8],
        [8, 16, 16],
        [8, 32, 32],
        [16, 64, 64],
        [16, 128, 128],
        [32, 256, 256],
    ]
    .into_iter()
    .map(|[t, h, w]| Shape3d { t, h, w })
    .collect()
}

impl GrowthSchedule {
    pub fn new(
        ladder: Vec<Shape3d>,
        images_per_phase: u64,
        images_per_transition: u64,
    ) -> Result<Self> {
        let s = Self {
            ladder,
            images_per_phase,
            images_per_transition,
        };
        s.validate()?;
        Ok(s)
    }

    /// The default ladder with equal phase and transition lengths.
    pub fn with_default_ladder(images_per_phase: u64) -> Self {
        Self {
            ladder: default_ladder(),
            images_per_phase,
            images_per_transition: images_per_phase,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ladder.is_empty() {
            return Err(Error::Config("ladder is empty".into()));
        }
        if self.images_per_phase == 0 || self.images_per_transition == 0 {
            return Err(Error::Config(
                "images_per_phase and images_per_transition must be positive".into(),
            ));
        }
        for r in &self.ladder {
            if r.t == 0 || r.h == 0 || r.w == 0 {
                return Err(Error::Config(format!("rung {r} has a zero extent")));
            }
        }
        for pair in self.ladder.windows(2) {
            self.factor_between(pair[0], pair[1])?;
        }
        Ok(())
    }

    fn factor_between(&self, lo: Shape3d, hi: Shape3d) -> Result<Shape3d> {
        let f = hi
            .ratio_over(&lo)
            .filter(|f| f.as_array().iter().all(|&v| v == 1 || v == 2) && f.volume() > 1)
            .ok_or_else(|| {
                Error::Config(format!("rungs {lo} -> {hi} must grow by 1 or 2 per axis"))
            })?;
        Ok(f)
    }

    /// Upsampling factor from rung `k - 1` to rung `k`.
    pub fn factor(&self, k: usize) -> Result<Shape3d> {
        if k == 0 || k >= self.ladder.len() {
            return Err(Error::OffLadder(format!(
                "no growth step into rung index {k}"
            )));
        }
        self.factor_between(self.ladder[k - 1], self.ladder[k])
    }

    pub fn final_rung(&self) -> Shape3d {
        *self.ladder.last().expect("validated ladder is non-empty")
    }
}

/// Moves `s` forward by `n_images`.
pub fn advance(s: PhaseState, sched: &GrowthSchedule, n_images: u64) -> PhaseState {
    let last = sched.ladder.len() - 1;
    let mut s = s;
    let mut left = n_images;
    loop {
        let len = match s.mode {
            Mode::Stable => sched.images_per_phase,
            Mode::Transition => sched.images_per_transition,
        };
        if s.mode == Mode::Stable && s.rung_index == last {
            s.images_seen += left;
            return s;
        }
        let room = len - s.images_seen;
        if left < room {
            s.images_seen += left;
            return s;
        }
        left -= room;
        s = match s.mode {
            Mode::Stable => PhaseState {
                rung_index: s.rung_index + 1,
                images_seen: 0,
                mode: Mode::Transition,
            },
            Mode::Transition => PhaseState {
                rung_index: s.rung_index,
                images_seen: 0,
                mode: Mode::Stable,
            },
        };
    }
}

/// Fade-in weight of the newest rung.
pub fn alpha(s: PhaseState, sched: &GrowthSchedule) -> f64 {
    match s.mode {
        Mode::Stable => 1.0,
        Mode::Transition => {
            (s.images_seen as f64 / sched.images_per_transition as f64).clamp(0.0, 1.0)
        }
    }
}

/// `(1 - a) * low + a * high`.
pub fn blend<T: Scalar>(low: &Tensor<T>, high: &Tensor<T>, a: f64) -> Result<Tensor<T>> {
    let a = T::lit(a);
    let one = T::one();
    low.zip_with(high, |l, h| (one - a) * l + a * h)
}

/// Pools a full-rung batch down to the active rung. During a transition the
/// second value is the previous rung, upsampled back to the active extents.
pub fn real_pyramid<T: Scalar>(
    x: &Tensor<T>,
    sched: &GrowthSchedule,
    s: PhaseState,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    let top = sched.final_rung();
    if x.rank() != 5 || x.dims()[2..] != top.as_array() {
        return Err(Error::OffLadder(format!(
            "real batch {:?} does not end in the final rung {top}",
            x.dims()
        )));
    }
    if s.rung_index >= sched.ladder.len() {
        return Err(Error::OffLadder(format!("rung index {}", s.rung_index)));
    }
    let mut cur = x.clone();
    for k in (s.rung_index + 1..sched.ladder.len()).rev() {
        cur = avg_pool3d(&cur, sched.factor(k)?)?;
    }
    let prev = match s.mode {
        Mode::Transition if s.rung_index > 0 => {
            let f = sched.factor(s.rung_index)?;
            Some(upsample_nearest3d(&avg_pool3d(&cur, f)?, f)?)
        }
        Mode::Transition => return Err(shape_err!("transition state at the base rung")),
        Mode::Stable => None,
    };
    Ok((cur, prev))
}

/// One row of the phase table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub rung_index: usize,
    pub rung: [usize; 3],
    pub mode: Mode,
    /// Cumulative image counter at entry, inclusive.
    pub images_start: u64,
    /// Cumulative image counter at exit; absent for the open-ended final phase.
    pub images_end: Option<u64>,
    pub alpha_start: f64,
    pub alpha_end: f64,
}

/// Every phase the schedule passes through, in order.
pub fn phase_table(sched: &GrowthSchedule) -> Vec<PhaseRow> {
    let mut rows = Vec::new();
    let mut at = 0u64;
    let mut s = PhaseState::default();
    let last = sched.ladder.len() - 1;
    loop {
        let len = match s.mode {
            Mode::Stable => sched.images_per_phase,
            Mode::Transition => sched.images_per_transition,
        };
        let open = s.mode == Mode::Stable && s.rung_index == last;
        let start_alpha = alpha(s, sched);
        let end = advance(
            PhaseState {
                images_seen: len,
                ..s
            },
            sched,
            0,
        );
        let end_alpha = match s.mode {
            Mode::Stable => 1.0,
            Mode::Transition => alpha(
                PhaseState {
                    images_seen: len,
                    ..s
                },
                sched,
            ),
        };
        rows.push(PhaseRow {
            rung_index: s.rung_index,
            rung: sched.ladder[s.rung_index].as_array(),
            mode: s.mode,
            images_start: at,
            images_end: (!open).then_some(at + len),
            alpha_start: start_alpha,
            alpha_end: end_alpha,
        });
        if open {
            return rows;
        }
        at += len;
        s = end;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sched() -> GrowthSchedule {
        GrowthSchedule::new(default_ladder(), 100, 100).unwrap()
    }

    #[test]
    fn advance_examples() {
        let sc = sched();
        let s0 = PhaseState::default();
        assert_eq!(advance(s0, &sc, 0), s0);
        let s1 = advance(s0, &sc, 100);
        assert_eq!(s1.mode, Mode::Transition);
        assert_eq!(s1.rung_index, 1);
        assert_eq!(alpha(s1, &sc), 0.0);
        assert_eq!(alpha(advance(s0, &sc, 150), &sc), 0.5);
        let s2 = advance(s0, &sc, 200);
        assert_eq!((s2.rung_index, s2.mode), (1, Mode::Stable));
        assert_eq!(alpha(s2, &sc), 1.0);
        let end = advance(s0, &sc, 1_000_000);
        assert_eq!((end.rung_index, end.mode), (6, Mode::Stable));
    }

    #[test]
    fn blend_examples() {
        let lo = Tensor::<f64>::zeros(&[2, 2]);
        let hi = Tensor::<f64>::full(&[2, 2], 2.0);
        assert_eq!(blend(&lo, &hi, 0.0).unwrap(), lo);
        assert_eq!(blend(&lo, &hi, 1.0).unwrap(), hi);
        assert_eq!(blend(&lo, &hi, 0.5).unwrap(), Tensor::ones(&[2, 2]));
        assert!(blend(&lo, &Tensor::zeros(&[3]), 0.5).is_err());
    }

    #[test]
    fn ladder_validation() {
        let bad = vec![Shape3d::cube(4), Shape3d::cube(4)];
        assert!(GrowthSchedule::new(bad, 1, 1).is_err());
        let bad = vec![Shape3d::cube(4), Shape3d::new(12, 8, 8).unwrap()];
        assert!(GrowthSchedule::new(bad, 1, 1).is_err());
        assert!(GrowthSchedule::new(default_ladder(), 0, 1).is_err());
    }

    #[test]
    fn pyramid_matches_single_shot_pooling() {
        let ladder = vec![
            Shape3d::cube(4),
            Shape3d::cube(8),
            Shape3d::new(8, 16, 16).unwrap(),
        ];
        let sc = GrowthSchedule::new(ladder, 10, 10).unwrap();
        let x = Tensor::<f64>::from_fn(&[2, 3, 8, 16, 16], |i| ((i * 7919) % 101) as f64 / 13.0);
        let s = PhaseState::default();
        let (cur, prev) = real_pyramid(&x, &sc, s).unwrap();
        assert!(prev.is_none());
        let direct = avg_pool3d(&x, Shape3d::new(2, 4, 4).unwrap()).unwrap();
        assert!(cur.max_abs_diff(&direct) < 1e-12);
        assert_eq!(cur.dims(), &[2, 3, 4, 4, 4]);

        let s = advance(PhaseState::default(), &sc, 15);
        let (cur, prev) = real_pyramid(&x, &sc, s).unwrap();
        assert_eq!(cur.dims(), &[2, 3, 8, 8, 8]);
        let want = upsample_nearest3d(&direct, Shape3d::cube(2)).unwrap();
        assert!(prev.unwrap().max_abs_diff(&want) < 1e-12);

        let c = Tensor::<f64>::full(&[1, 3, 8, 16, 16], 3.5);
        for n in [0, 15, 25, 35] {
            let (cur, _) = real_pyramid(&c, &sc, advance(PhaseState::default(), &sc, n)).unwrap();
            assert!(cur.data().iter().all(|&v| v == 3.5));
        }
        assert!(real_pyramid(&Tensor::<f64>::zeros(&[1, 3, 8, 8, 8]), &sc, s).is_err());
    }

    #[test]
    fn phase_table_rows() {
        let rows = phase_table(&sched());
        assert_eq!(rows.len(), 13);
        let rungs: Vec<[usize; 3]> = rows
            .iter()
            .filter(|r| r.mode == Mode::Stable)
            .map(|r| r.rung)
            .collect();
        assert_eq!(
            rungs,
            default_ladder()
                .iter()
                .map(|r| r.as_array())
                .collect::<Vec<_>>()
        );
        for r in rows.iter().filter(|r| r.mode == Mode::Transition) {
            assert_eq!((r.alpha_start, r.alpha_end), (0.0, 1.0));
        }
        assert_eq!(rows[1].images_start, 100);
        assert_eq!(rows.last().unwrap().images_end, None);
    }

    proptest! {
        #[test]
        fn alpha_monotone_within_transition(steps in proptest::collection::vec(0u64..40, 1..60)) {
            let sc = GrowthSchedule::new(default_ladder(), 50, 70).unwrap();
            let mut s = PhaseState::default();
            let mut prev = (s.rung_index, s.mode, alpha(s, &sc));
            for n in steps {
                s = advance(s, &sc, n);
                let a = alpha(s, &sc);
                prop_assert!((0.0..=1.0).contains(&a));
                if s.mode == Mode::Stable {
                    prop_assert_eq!(a, 1.0);
                }
                if s.mode == Mode::Transition && prev.1 == Mode::Transition && prev.0 == s.rung_index {
                    prop_assert!(a >= prev.2);
                }
                prop_assert!(s.rung_index >= prev.0);
                prev = (s.rung_index, s.mode, a);
            }
        }

        #[test]
        fn advance_is_additive(a in 0u64..500, b in 0u64..500) {
            let sc = GrowthSchedule::new(default_ladder(), 37, 23).unwrap();
            let s0 = PhaseState::default();
            prop_assert_eq!(advance(advance(s0, &sc, a), &sc, b), advance(s0, &sc, a + b));
        }
    }
}
